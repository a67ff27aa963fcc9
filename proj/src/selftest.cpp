#include "dmlm/selftest.hpp"

#include <chrono>
#include <cmath>
#include <ostream>
#include <sstream>

#include "dmlm/data.hpp"
#include "dmlm/oracles.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/training.hpp"

namespace dmlm {

SelftestHooks::SelftestHooks()
    : kl([](const DiagGaussian& p, const DiagGaussian& q) { return kl_diag(p, q); }),
      w2([](const DiagGaussian& p, const DiagGaussian& q) { return w2_diag(p, q); }),
      kl_grad([](const DiagGaussian& p, const DiagGaussian& q) { return kl_diag_grad(p, q); }),
      w2_grad([](const DiagGaussian& p, const DiagGaussian& q) { return w2_diag_grad(p, q); }) {}

namespace {

DiagGaussian random_gaussian(Rng& rng, std::size_t d) {
    Eigen::VectorXd mu(static_cast<Eigen::Index>(d)), lv(static_cast<Eigen::Index>(d));
    for (Eigen::Index k = 0; k < mu.size(); ++k) {
        mu[k] = 3.0 * (2.0 * rng.uniform01() - 1.0);
        lv[k] = 1.5 * (2.0 * rng.uniform01() - 1.0);
    }
    return DiagGaussian(mu, lv);
}

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

SelftestEntry check_kl_vs_mc(const SelftestHooks& hooks) {
    Timer timer;
    SelftestEntry e{"kl closed form vs monte-carlo oracle"};
    Rng rng(101);
    double worst = 0.0;
    bool ok = true;
    for (int trial = 0; trial < 40; ++trial) {
        const auto p = random_gaussian(rng, 1);
        const auto q = random_gaussian(rng, 1);
        const auto est = mc_kl_oracle(p, q, 200000, Rng::mix(7, trial));
        const double err = std::fabs(hooks.kl(p, q) - est.value);
        const double bound = 3.0 * est.std_error + 1e-12;
        worst = std::max(worst, err / std::max(bound, 1e-12));
        if (err > bound) ok = false;
    }
    e.passed = ok;
    std::ostringstream ss;
    ss << "worst err / 3se = " << worst;
    e.detail = ss.str();
    e.seconds = timer.seconds();
    return e;
}

SelftestEntry check_w2_vs_quantile(const SelftestHooks& hooks) {
    Timer timer;
    SelftestEntry e{"w2 closed form vs quantile oracle"};
    Rng rng(103);
    double worst = 0.0;
    for (int trial = 0; trial < 40; ++trial) {
        const auto p = random_gaussian(rng, 1);
        const auto q = random_gaussian(rng, 1);
        worst = std::max(worst, std::fabs(hooks.w2(p, q) - quantile_w2_oracle(p, q, 100000)));
    }
    e.passed = worst <= 1e-3;
    std::ostringstream ss;
    ss << "worst |closed - quadrature| = " << worst;
    e.detail = ss.str();
    e.seconds = timer.seconds();
    return e;
}

SelftestEntry check_pair_gradients(const SelftestHooks& hooks) {
    Timer timer;
    SelftestEntry e{"kl/w2 analytic gradients vs central differences"};
    Rng rng(105);
    const double h = 1e-5;
    double worst = 0.0;
    int checked = 0;
    for (int trial = 0; trial < 40 && checked < 20; ++trial) {
        auto p = random_gaussian(rng, 3);
        auto q = random_gaussian(rng, 3);
        if (hooks.w2(p, q) < 0.3) continue;
        ++checked;
        const PairGrad kg = hooks.kl_grad(p, q);
        const PairGrad wg = hooks.w2_grad(p, q);
        auto sweep = [&](auto eval, Eigen::VectorXd& field, const Eigen::VectorXd& analytic) {
            for (Eigen::Index k = 0; k < field.size(); ++k) {
                const double orig = field[k];
                field[k] = orig + h;
                const double up = eval();
                field[k] = orig - h;
                const double dn = eval();
                field[k] = orig;
                const double fd = (up - dn) / (2.0 * h);
                const double denom = std::max({std::fabs(fd), std::fabs(analytic[k]), 1e-6});
                worst = std::max(worst, std::fabs(fd - analytic[k]) / denom);
            }
        };
        auto kl_eval = [&]() { return hooks.kl(p, q); };
        sweep(kl_eval, p.mu, kg.d_mu_p);
        sweep(kl_eval, p.log_var, kg.d_log_var_p);
        sweep(kl_eval, q.mu, kg.d_mu_q);
        sweep(kl_eval, q.log_var, kg.d_log_var_q);
        auto w2_eval = [&]() { return hooks.w2(p, q); };
        sweep(w2_eval, p.mu, wg.d_mu_p);
        sweep(w2_eval, p.log_var, wg.d_log_var_p);
        sweep(w2_eval, q.mu, wg.d_mu_q);
        sweep(w2_eval, q.log_var, wg.d_log_var_q);
    }
    e.passed = checked >= 15 && worst <= 1e-4;
    std::ostringstream ss;
    ss << "pairs " << checked << ", worst rel err " << worst;
    e.detail = ss.str();
    e.seconds = timer.seconds();
    return e;
}

SelftestEntry check_total_loss_gradient() {
    Timer timer;
    SelftestEntry e{"total-loss gradient vs central differences"};

    DatasetSpec spec;
    spec.n_samples = 4;
    spec.n_classes = 2;
    spec.grid_h = 4;
    spec.grid_w = 4;
    spec.patch_dim = 8;
    spec.noise_std = 0.05;
    spec.seed = 9;
    const Lexicon lexicon = Lexicon::builtin();
    const Dataset ds = generate_dataset(spec, lexicon);
    const Vocab vocab = Vocab::build(corpus_texts(ds));
    const auto samples = tokenize_dataset(ds, vocab, TextMode::structured, 96);

    EncoderConfig ecfg;
    ecfg.d_model = 16;
    ecfg.n_layers = 1;
    ecfg.n_heads = 2;
    ecfg.vocab_size = vocab.size();
    ecfg.max_len = 96;
    ecfg.patch_dim = spec.patch_dim;
    TrainingConfig tcfg;
    tcfg.seed = 11;
    tcfg.batch_size = 4;
    tcfg.max_steps = 10;

    Trainer trainer(Model::init(ecfg, 13), tcfg, samples.size());
    const auto batches = make_batches(samples, tcfg.batch_size, tcfg.seed, false);
    const StepContext ctx = trainer.make_context(samples, batches[0]);

    trainer.loss_with_context(ctx, true);

    Rng pick(15);
    double worst = 0.0;
    const double h = 1e-4;
    int n_checked = 0;
    std::vector<std::string> names;
    for (const auto& [name, p] : trainer.model().params) names.push_back(name);
    while (n_checked < 10) {
        const std::string& name = names[pick.uniform_below(names.size())];
        ParamTensor& p = trainer.model().params.at(name);
        const auto idx = static_cast<Eigen::Index>(pick.uniform_below(
            static_cast<std::size_t>(p.value.size())));
        const double analytic = p.grad(idx);
        const double orig = p.value(idx);
        p.value(idx) = orig + h;
        const double up = trainer.loss_with_context(ctx, false).total;
        p.value(idx) = orig - h;
        const double dn = trainer.loss_with_context(ctx, false).total;
        p.value(idx) = orig;
        const double fd = (up - dn) / (2.0 * h);
        const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-6});
        worst = std::max(worst, std::fabs(fd - analytic) / denom);
        ++n_checked;
    }
    e.passed = worst <= 1e-3;
    std::ostringstream ss;
    ss << n_checked << " parameters, worst rel err " << worst;
    e.detail = ss.str();
    e.seconds = timer.seconds();
    return e;
}

}  // namespace

std::vector<SelftestEntry> run_selftest(const SelftestHooks& hooks) {
    std::vector<SelftestEntry> out;
    out.push_back(check_kl_vs_mc(hooks));
    out.push_back(check_w2_vs_quantile(hooks));
    out.push_back(check_pair_gradients(hooks));
    out.push_back(check_total_loss_gradient());
    return out;
}

bool selftest_report(std::ostream& os, const std::vector<SelftestEntry>& entries) {
    bool all = true;
    for (const auto& e : entries) {
        os << (e.passed ? "[pass] " : "[FAIL] ") << e.name << " (" << e.detail << ", "
           << e.seconds << " s)\n";
        all = all && e.passed;
    }
    os << (all ? "selftest: all checks passed\n" : "selftest: FAILURES present\n");
    return all;
}

}  // namespace dmlm
