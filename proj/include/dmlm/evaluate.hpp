#pragma once

#include <string>
#include <vector>

#include "dmlm/data.hpp"
#include "dmlm/encoder.hpp"
#include "dmlm/gaussian.hpp"
#include "dmlm/reports.hpp"

namespace dmlm {

/// One zero-shot class anchor: the lexicon report for that disease,
/// rendered and tokenized.
struct ClassPrompt {
    std::size_t class_id = 0;
    std::string disease;
    StructuredReport report;
    TextInput text;
};

std::vector<ClassPrompt> build_class_prompts(const Lexicon& lexicon, std::size_t n_classes,
                                             const Vocab& vocab, std::size_t max_len,
                                             TextMode mode = TextMode::structured);

enum class ScoreRule { w2, kl };

/// softmax(-distances / tau); shift-invariant in the distances.
std::vector<double> softmax_scores(const std::vector<double>& distances, double tau);

/// softmax over classes of -distance(image, prompt_c) / tau. Scores sum
/// to one; requires at least two classes.
std::vector<double> zero_shot_scores(const DiagGaussian& image_pooled,
                                     const std::vector<DiagGaussian>& prompt_pooled,
                                     double tau = 1.0, ScoreRule rule = ScoreRule::w2);

/// Pooled plain-pass distributions for every prompt.
std::vector<DiagGaussian> pool_prompts(const Model& model, const std::vector<ClassPrompt>& prompts);

/// n x C score matrix over a dataset.
Eigen::MatrixXd score_dataset(const Model& model, const std::vector<PairedSample>& samples,
                              const std::vector<ClassPrompt>& prompts, double tau = 1.0,
                              ScoreRule rule = ScoreRule::w2);

struct PerClassMetrics {
    std::size_t class_id = 0;
    double auc = 0.0;
    bool auc_defined = false;
    double f1 = 0.0;
    std::size_t support = 0;
};

struct EvalResult {
    double auc = 0.0;  // macro over classes with defined AUC
    double f1 = 0.0;   // macro
    double acc = 0.0;
    std::vector<PerClassMetrics> per_class;
    std::vector<std::string> warnings;
};

/// One-vs-rest AUC per class (rank-based, ties at half credit), macro
/// mean; F1 at argmax decisions with ties broken by lowest class id;
/// accuracy as argmax match rate. Classes absent from the labels are
/// excluded from the AUC macro with a warning.
EvalResult compute_metrics(const Eigen::MatrixXd& scores, const std::vector<std::size_t>& labels);

/// Results artifact: structured JSON record plus a plain-text summary.
void write_eval_result(const std::string& json_path, const std::string& text_path,
                       const EvalResult& result, const std::vector<ClassPrompt>& prompts,
                       const std::string& config_hash);

}  // namespace dmlm
