#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dmlm/data.hpp"
#include "dmlm/errors.hpp"
#include "dmlm/evaluate.hpp"
#include "dmlm/rng.hpp"

using namespace dmlm;

namespace {

// All positive/negative pairs, half credit for ties.
double pairwise_auc_oracle(const Eigen::MatrixXd& scores, const std::vector<std::size_t>& labels,
                           std::size_t cls) {
    double credit = 0.0;
    std::size_t n_pos = 0, n_neg = 0;
    const auto col = static_cast<Eigen::Index>(cls);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != cls) continue;
        ++n_pos;
        for (std::size_t j = 0; j < labels.size(); ++j) {
            if (labels[j] == cls) continue;
            const double si = scores(static_cast<Eigen::Index>(i), col);
            const double sj = scores(static_cast<Eigen::Index>(j), col);
            credit += si > sj ? 1.0 : si == sj ? 0.5 : 0.0;
        }
    }
    n_neg = labels.size() - n_pos;
    return credit / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

TEST_CASE("softmax scores: normalization and shift invariance") {
    Rng rng(1);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t c = 2 + rng.uniform_below(6);
        std::vector<double> d(c), shifted(c);
        const double shift = 10.0 * (2.0 * rng.uniform01() - 1.0);
        for (std::size_t i = 0; i < c; ++i) {
            d[i] = 5.0 * rng.uniform01();
            shifted[i] = d[i] + shift;
        }
        const auto a = softmax_scores(d, 1.0);
        const auto b = softmax_scores(shifted, 1.0);
        double sum = 0.0;
        for (std::size_t i = 0; i < c; ++i) {
            CHECK(std::fabs(a[i] - b[i]) <= 1e-12);
            sum += a[i];
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("zero-shot scores degenerate cases") {
    const DiagGaussian img = DiagGaussian::scalar(0.0, 1.0);
    const DiagGaussian same = DiagGaussian::scalar(0.0, 1.0);
    const DiagGaussian far = DiagGaussian::scalar(5.0, 1.0);

    // Identical prompt distributions -> uniform 1/C.
    const auto uniform = zero_shot_scores(img, {same, same, same, same});
    for (double s : uniform) CHECK(s == doctest::Approx(0.25).epsilon(1e-12));

    // C=2, one prompt equal to the image's pooled distribution -> > 0.5.
    const auto two = zero_shot_scores(img, {same, far});
    CHECK(two[0] > 0.5);

    CHECK_THROWS_AS(zero_shot_scores(img, {same}), contract_error);

    // KL rule is available as a config option.
    const auto kl_scores = zero_shot_scores(img, {same, far}, 1.0, ScoreRule::kl);
    CHECK(kl_scores[0] > 0.5);
}

TEST_CASE("compute_metrics: perfect and degenerate predictions") {
    // Perfect one-hot scores.
    Eigen::MatrixXd perfect = Eigen::MatrixXd::Zero(6, 3);
    const std::vector<std::size_t> labels = {0, 1, 2, 0, 1, 2};
    for (int i = 0; i < 6; ++i) perfect(i, static_cast<Eigen::Index>(labels[i])) = 1.0;
    const auto res = compute_metrics(perfect, labels);
    CHECK(res.auc == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.f1 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(res.acc == doctest::Approx(1.0).epsilon(1e-12));

    // All-one-class predictions on balanced 2-class data:
    // acc = 0.5, macro F1 = (2/3 + 0)/2 = 1/3.
    Eigen::MatrixXd onesided(4, 2);
    onesided << 0.9, 0.1, 0.8, 0.2, 0.7, 0.3, 0.6, 0.4;
    const std::vector<std::size_t> bal = {0, 0, 1, 1};
    const auto deg = compute_metrics(onesided, bal);
    CHECK(deg.acc == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(deg.f1 == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("uniform random scores on balanced binary data give AUC near 0.5") {
    Rng rng(7);
    const std::size_t n = 10000;
    Eigen::MatrixXd scores(n, 2);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double s = rng.uniform01();
        scores(static_cast<Eigen::Index>(i), 0) = s;
        scores(static_cast<Eigen::Index>(i), 1) = 1.0 - s;
        labels[i] = i % 2;
    }
    const auto res = compute_metrics(scores, labels);
    CHECK(std::fabs(res.auc - 0.5) <= 0.02);
}

TEST_CASE("rank-based AUC matches the brute-force pairwise oracle") {
    Rng rng(11);
    for (int instance = 0; instance < 100; ++instance) {
        const std::size_t n = 5 + rng.uniform_below(46);  // n <= 50
        const std::size_t c = 2 + rng.uniform_below(3);
        Eigen::MatrixXd scores(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(c));
        std::vector<std::size_t> labels(n);
        bool all_classes = false;
        while (!all_classes) {
            for (std::size_t i = 0; i < n; ++i) labels[i] = rng.uniform_below(c);
            std::vector<int> seen(c, 0);
            for (std::size_t l : labels) seen[l] = 1;
            all_classes = std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; });
        }
        for (Eigen::Index i = 0; i < scores.size(); ++i) {
            // Quantized scores produce plenty of ties.
            scores(i) = std::floor(rng.uniform01() * 8.0) / 8.0;
        }
        const auto res = compute_metrics(scores, labels);
        for (std::size_t cls = 0; cls < c; ++cls) {
            const double oracle = pairwise_auc_oracle(scores, labels, cls);
            REQUIRE(res.per_class[cls].auc_defined);
            CHECK(std::fabs(res.per_class[cls].auc - oracle) <= 1e-9);
        }
    }
}

TEST_CASE("absent class excluded from macro AUC with a warning") {
    Eigen::MatrixXd scores(4, 3);
    scores << 0.8, 0.1, 0.1, 0.7, 0.2, 0.1, 0.2, 0.7, 0.1, 0.1, 0.8, 0.1;
    const std::vector<std::size_t> labels = {0, 0, 1, 1};  // class 2 absent
    const auto res = compute_metrics(scores, labels);
    CHECK_FALSE(res.per_class[2].auc_defined);
    CHECK(res.warnings.size() == 1);
    CHECK(res.per_class[0].auc_defined);
    CHECK(res.per_class[1].auc_defined);
}

TEST_CASE("determinism and argmax tie-breaking to lowest class id") {
    Eigen::MatrixXd scores(2, 3);
    scores << 0.4, 0.4, 0.2, 0.3, 0.3, 0.4;
    const std::vector<std::size_t> labels = {0, 2};
    const auto a = compute_metrics(scores, labels);
    const auto b = compute_metrics(scores, labels);
    CHECK(a.acc == b.acc);
    CHECK(a.f1 == b.f1);
    // Row 0 ties between class 0 and 1 -> predicted 0 -> correct.
    CHECK(a.acc == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("class prompts carry a non-empty appearance span and pool cleanly") {
    const Lexicon lex = Lexicon::builtin();
    DatasetSpec spec;
    spec.n_samples = 8;
    spec.n_classes = 4;
    spec.grid_h = 4;
    spec.grid_w = 4;
    spec.patch_dim = 8;
    spec.noise_std = 0.05;
    spec.seed = 3;
    const Dataset ds = generate_dataset(spec, lex);
    const Vocab vocab = Vocab::build(corpus_texts(ds));

    const auto prompts = build_class_prompts(lex, 4, vocab, 128);
    REQUIRE(prompts.size() == 4);
    for (const auto& p : prompts) {
        CHECK_FALSE(p.text.spans.appearance.empty());
        CHECK(p.disease == lex.at(p.class_id).disease);
    }

    EncoderConfig ecfg;
    ecfg.d_model = 16;
    ecfg.n_layers = 1;
    ecfg.n_heads = 2;
    ecfg.vocab_size = vocab.size();
    ecfg.max_len = 128;
    ecfg.patch_dim = spec.patch_dim;
    const Model model = Model::init(ecfg, 5);
    const auto pools = pool_prompts(model, prompts);
    CHECK(pools.size() == 4);

    const auto samples = tokenize_dataset(ds, vocab, TextMode::structured, 128);
    const auto scores = score_dataset(model, samples, prompts);
    CHECK(scores.rows() == 8);
    CHECK(scores.cols() == 4);
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
        CHECK(scores.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
    }

    CHECK_THROWS_AS(build_class_prompts(lex, 1, vocab, 128), contract_error);
}
