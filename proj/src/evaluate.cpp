#include "dmlm/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "dmlm/errors.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

std::vector<ClassPrompt> build_class_prompts(const Lexicon& lexicon, std::size_t n_classes,
                                             const Vocab& vocab, std::size_t max_len,
                                             TextMode mode) {
    if (n_classes < 2) throw contract_error("build_class_prompts: need at least two classes");
    if (n_classes > lexicon.size()) {
        throw contract_error("build_class_prompts: lexicon smaller than class count");
    }
    std::vector<ClassPrompt> out;
    for (std::size_t c = 0; c < n_classes; ++c) {
        const auto& entry = lexicon.at(c);
        ClassPrompt p;
        p.class_id = c;
        p.disease = entry.disease;
        p.report = generate_report(entry.disease, {"typical radiographic presentation"},
                                   ReportBackend::template_backend, lexicon)
                       .report;
        p.text = mode == TextMode::structured
                     ? tokenize_report(p.report, vocab, max_len)
                     : tokenize_findings_only(p.report.observations, vocab, max_len);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<double> softmax_scores(const std::vector<double>& distances, double tau) {
    if (!(tau > 0.0)) throw contract_error("softmax_scores: tau positive");
    if (distances.empty()) throw contract_error("softmax_scores: empty input");
    std::vector<double> logits(distances.size());
    for (std::size_t c = 0; c < distances.size(); ++c) logits[c] = -distances[c] / tau;
    const double mx = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double& l : logits) {
        l = std::exp(l - mx);
        z += l;
    }
    for (double& l : logits) l /= z;
    return logits;
}

std::vector<double> zero_shot_scores(const DiagGaussian& image_pooled,
                                     const std::vector<DiagGaussian>& prompt_pooled, double tau,
                                     ScoreRule rule) {
    if (prompt_pooled.size() < 2) throw contract_error("zero_shot_scores: need C >= 2");
    std::vector<double> distances(prompt_pooled.size());
    for (std::size_t c = 0; c < prompt_pooled.size(); ++c) {
        distances[c] = rule == ScoreRule::w2 ? w2_diag(image_pooled, prompt_pooled[c])
                                             : kl_diag(image_pooled, prompt_pooled[c]);
    }
    return softmax_scores(distances, tau);
}

std::vector<DiagGaussian> pool_prompts(const Model& model,
                                       const std::vector<ClassPrompt>& prompts) {
    std::vector<DiagGaussian> out;
    out.reserve(prompts.size());
    for (const auto& p : prompts) out.push_back(pool_sequence(model.encode_text(p.text)));
    return out;
}

Eigen::MatrixXd score_dataset(const Model& model, const std::vector<PairedSample>& samples,
                              const std::vector<ClassPrompt>& prompts, double tau,
                              ScoreRule rule) {
    if (samples.empty()) throw degenerate_input_error("score_dataset: empty dataset");
    const std::vector<DiagGaussian> prompt_pools = pool_prompts(model, prompts);
    Eigen::MatrixXd scores(static_cast<Eigen::Index>(samples.size()),
                           static_cast<Eigen::Index>(prompts.size()));
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const DiagGaussian img = pool_sequence(model.encode_image(samples[i].image));
        const auto row = zero_shot_scores(img, prompt_pools, tau, rule);
        for (std::size_t c = 0; c < row.size(); ++c) {
            scores(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = row[c];
        }
    }
    return scores;
}

namespace {

// Rank-based one-vs-rest AUC with average ranks for ties; equivalent to
// the pairwise count with half credit for equal scores.
double auc_one_vs_rest(const Eigen::MatrixXd& scores, const std::vector<std::size_t>& labels,
                       std::size_t cls) {
    const auto n = static_cast<std::size_t>(scores.rows());
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const auto col = static_cast<Eigen::Index>(cls);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return scores(static_cast<Eigen::Index>(a), col) < scores(static_cast<Eigen::Index>(b), col);
    });

    double rank_sum_pos = 0.0;
    std::size_t n_pos = 0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j < n && scores(static_cast<Eigen::Index>(order[j]), col) ==
                            scores(static_cast<Eigen::Index>(order[i]), col)) {
            ++j;
        }
        const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // 1-based average
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == cls) {
                rank_sum_pos += avg_rank;
                ++n_pos;
            }
        }
        i = j;
    }
    const std::size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) return std::numeric_limits<double>::quiet_NaN();
    const double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                        static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

}  // namespace

EvalResult compute_metrics(const Eigen::MatrixXd& scores, const std::vector<std::size_t>& labels) {
    const auto n = static_cast<std::size_t>(scores.rows());
    const auto n_classes = static_cast<std::size_t>(scores.cols());
    if (n == 0 || n_classes < 2) throw contract_error("compute_metrics: need rows and C >= 2");
    if (labels.size() != n) throw contract_error("compute_metrics: one score row per label");
    for (std::size_t l : labels) {
        if (l >= n_classes) throw contract_error("compute_metrics: label out of range");
    }

    // Argmax predictions, ties to the lowest class id.
    std::vector<std::size_t> pred(n);
    for (std::size_t i = 0; i < n; ++i) {
        Eigen::Index best = 0;
        for (Eigen::Index c = 1; c < scores.cols(); ++c) {
            if (scores(static_cast<Eigen::Index>(i), c) >
                scores(static_cast<Eigen::Index>(i), best)) {
                best = c;
            }
        }
        pred[i] = static_cast<std::size_t>(best);
    }

    EvalResult res;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (pred[i] == labels[i]) ++correct;
    }
    res.acc = static_cast<double>(correct) / static_cast<double>(n);

    double auc_sum = 0.0, f1_sum = 0.0;
    std::size_t auc_count = 0, f1_count = 0;
    for (std::size_t c = 0; c < n_classes; ++c) {
        PerClassMetrics pc;
        pc.class_id = c;
        std::size_t tp = 0, fp = 0, fn = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool is_true = labels[i] == c;
            const bool is_pred = pred[i] == c;
            if (is_true && is_pred) ++tp;
            if (!is_true && is_pred) ++fp;
            if (is_true && !is_pred) ++fn;
            if (is_true) ++pc.support;
        }
        const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / (tp + fp);
        const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / (tp + fn);
        pc.f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);

        const double auc = auc_one_vs_rest(scores, labels, c);
        if (std::isnan(auc)) {
            res.warnings.push_back("class " + std::to_string(c) +
                                   " absent from labels; AUC undefined, excluded from macro");
        } else {
            pc.auc = auc;
            pc.auc_defined = true;
            auc_sum += auc;
            ++auc_count;
        }
        if (pc.support > 0) {
            f1_sum += pc.f1;
            ++f1_count;
        }
        res.per_class.push_back(pc);
    }
    res.auc = auc_count > 0 ? auc_sum / static_cast<double>(auc_count) : 0.0;
    res.f1 = f1_count > 0 ? f1_sum / static_cast<double>(f1_count) : 0.0;
    return res;
}

void write_eval_result(const std::string& json_path, const std::string& text_path,
                       const EvalResult& result, const std::vector<ClassPrompt>& prompts,
                       const std::string& config_hash) {
    nlohmann::json j;
    j["config_hash"] = config_hash;
    j["auc"] = result.auc;
    j["f1"] = result.f1;
    j["acc"] = result.acc;
    j["warnings"] = result.warnings;
    j["per_class"] = nlohmann::json::array();
    for (const auto& pc : result.per_class) {
        nlohmann::json c;
        c["class_id"] = pc.class_id;
        if (pc.class_id < prompts.size()) c["disease"] = prompts[pc.class_id].disease;
        c["auc"] = pc.auc_defined ? nlohmann::json(pc.auc) : nlohmann::json(nullptr);
        c["f1"] = pc.f1;
        c["support"] = pc.support;
        j["per_class"].push_back(c);
    }
    atomic_write_file(json_path, j.dump(2) + "\n");

    std::ostringstream txt;
    txt << "zero-shot evaluation (config " << config_hash << ")\n";
    txt << "  macro AUC " << result.auc << "  macro F1 " << result.f1 << "  ACC " << result.acc
        << "\n";
    for (const auto& pc : result.per_class) {
        txt << "  class " << pc.class_id;
        if (pc.class_id < prompts.size()) txt << " (" << prompts[pc.class_id].disease << ")";
        if (pc.auc_defined) {
            txt << "  auc " << pc.auc;
        } else {
            txt << "  auc n/a";
        }
        txt << "  f1 " << pc.f1 << "  support " << pc.support << "\n";
    }
    for (const auto& w : result.warnings) txt << "  warning: " << w << "\n";
    atomic_write_file(text_path, txt.str());
}

}  // namespace dmlm
