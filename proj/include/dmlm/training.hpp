#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dmlm/data.hpp"
#include "dmlm/encoder.hpp"
#include "dmlm/gaussian.hpp"
#include "dmlm/masking.hpp"

namespace dmlm {

struct TrainingConfig {
    double lambda = 0.2;           // weight of the masked-reconstruction term
    double text_mask_ratio = 0.3;
    double image_base_ratio = 0.3;
    double mask_tau = 0.1;
    std::size_t epochs = 30;
    std::size_t max_steps = 0;     // 0: derive from epochs and dataset size
    std::size_t batch_size = 16;
    double peak_lr = 3e-4;
    double encoder_lr = 1e-5;
    double weight_decay = 0.05;
    double warmup_fraction = 0.1;
    std::uint64_t seed = 0;
    TextMode text_mode = TextMode::structured;

    void validate() const;
    bool operator==(const TrainingConfig&) const = default;

    /// Original-scale preset (100 epochs, batch 128); documented, not the
    /// default.
    static TrainingConfig paper_scale();
};

struct LossBreakdown {
    double dmlm_text = 0.0;
    double dmlm_image = 0.0;
    double dmlm_total = 0.0;
    double align = 0.0;
    double total = 0.0;
    std::size_t n_masked_text = 0;
    std::size_t n_masked_image = 0;
};

/// Mask-restricted KL means (value level, mirroring the training graph):
///   dmlm_text  = mean over M_text of KL(student_t || teacher_t)
///   dmlm_image = mean over M_image of KL(student_p || teacher_p).
/// Throws degenerate_input_error when both mask sets are empty.
LossBreakdown dmlm_loss(const GaussianSequence& student_text,
                        const GaussianSequence& student_image,
                        const GaussianSequence& teacher_text,
                        const GaussianSequence& teacher_image, const MaskPlan& plan);

/// Mean W2 over matched (i,i) pairs.
double align_loss(const std::vector<DiagGaussian>& pooled_text,
                  const std::vector<DiagGaussian>& pooled_image,
                  const std::vector<bool>& pair_mask);

double total_loss(double dmlm_total, double align, double lambda);

/// Stop-gradient teacher pass: both encoders on the unmasked inputs.
std::pair<GaussianSequence, GaussianSequence> teacher_targets(const Model& model,
                                                              const TextInput& text,
                                                              const ImageInput& image);

/// Head-group learning rate: linear warmup to peak_lr, cosine decay to
/// exactly 0 at the final step.
double lr_at_step(const TrainingConfig& cfg, std::size_t step, std::size_t total_steps);

/// Decoupled-weight-decay adaptive-moment optimizer with two parameter
/// groups: encoder backbone at the fixed encoder_lr, heads at the
/// scheduled rate.
class AdamW {
  public:
    struct Moments {
        Eigen::MatrixXd m, v;
    };

    void step(ParamStore& params, double head_lr, double encoder_lr, double weight_decay);

    std::size_t t() const { return t_; }
    const std::map<std::string, Moments>& state() const { return state_; }
    void restore(std::size_t t, std::map<std::string, Moments> state);

    static bool is_head_param(const std::string& name);

  private:
    std::map<std::string, Moments> state_;
    std::size_t t_ = 0;
};

/// Frozen per-sample stop-gradient context: mask plans, teacher targets
/// and cross-modal conditioning vectors. Holding these fixed makes the
/// loss a smooth function of the parameters, which is what the
/// finite-difference checks differentiate.
struct StepContext {
    std::vector<TextInput> texts;
    std::vector<const ImageInput*> images;
    std::vector<MaskPlan> plans;
    std::vector<GaussianSequence> teacher_text;
    std::vector<GaussianSequence> teacher_image;
    std::vector<Eigen::RowVectorXd> cond_for_text;   // pooled image mean
    std::vector<Eigen::RowVectorXd> cond_for_image;  // pooled text mean
};

class Trainer {
  public:
    Trainer(Model model, TrainingConfig cfg, std::size_t dataset_size);

    /// One optimizer step on a batch; throws numerical_error on a
    /// non-finite loss, carrying the diagnostic breakdown in what().
    LossBreakdown train_step(const std::vector<PairedSample>& samples, const Batch& batch);

    /// Builds the frozen stop-gradient context for a batch at the current
    /// parameters (plans seeded by config seed and step index).
    StepContext make_context(const std::vector<PairedSample>& samples, const Batch& batch) const;

    /// Loss (and gradients when with_grad) for a fixed context. Pure in
    /// the parameters; used by train_step and by the gradient checks.
    LossBreakdown loss_with_context(const StepContext& ctx, bool with_grad) const;

    /// Same computation with the student outputs detached; every
    /// parameter gradient must come out exactly zero (teacher isolation).
    LossBreakdown loss_with_detached_students(const StepContext& ctx) const;

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    const TrainingConfig& config() const { return cfg_; }
    std::size_t step() const { return step_; }
    void set_step(std::size_t s) { step_ = s; }
    std::size_t total_steps() const { return total_steps_; }
    double current_lr() const { return lr_at_step(cfg_, step_, total_steps_); }
    AdamW& optimizer() { return opt_; }

  private:
    Model model_;
    TrainingConfig cfg_;
    AdamW opt_;
    std::size_t step_ = 0;
    std::size_t total_steps_ = 0;
};

/// Line-delimited step records; doubles printed with full round-trip
/// precision so a rerun produces a bit-identical log.
class MetricsLog {
  public:
    explicit MetricsLog(const std::string& path);
    void append(std::size_t step, double lr, const LossBreakdown& lb);
    static std::string format_record(std::size_t step, double lr, const LossBreakdown& lb);

  private:
    std::ofstream out_;
};

/// Runs the configured number of steps (epoch shuffling, partial final
/// batches kept). Returns the per-step breakdown stream.
std::vector<LossBreakdown> train_loop(Trainer& trainer,
                                      const std::vector<PairedSample>& samples,
                                      MetricsLog* log = nullptr);

/// Checkpoint archive: every parameter array plus optimizer moments,
/// keyed by hierarchical names, with configs and step as embedded JSON
/// metadata. Bit-exact round trip.
void save_checkpoint(const std::string& path, const Model& model, const TrainingConfig& cfg,
                     std::size_t step, std::uint64_t vocab_hash, const AdamW* opt = nullptr);

struct Checkpoint {
    EncoderConfig encoder_cfg;
    TrainingConfig train_cfg;
    std::size_t step = 0;
    std::uint64_t vocab_hash = 0;
    Model model;
    std::size_t opt_t = 0;
    std::map<std::string, AdamW::Moments> opt_state;
};

Checkpoint load_checkpoint(const std::string& path);

/// Serialization of TrainingConfig (used by checkpoints, manifests and
/// the CLI config file).
std::string training_config_to_json(const TrainingConfig& cfg);
TrainingConfig training_config_from_json(const std::string& text);

}  // namespace dmlm
