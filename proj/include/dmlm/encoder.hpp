#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "dmlm/autograd.hpp"
#include "dmlm/gaussian.hpp"
#include "dmlm/masking.hpp"
#include "dmlm/types.hpp"

namespace dmlm {

struct EncoderConfig {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t vocab_size = 0;
    std::size_t max_len = 128;
    std::size_t patch_dim = 16;

    void validate() const;
    bool operator==(const EncoderConfig&) const = default;

    /// The configuration the original-scale setup would use (latent
    /// dimension 768); kept as a documented preset, not a default.
    static EncoderConfig paper_scale();
};

struct ParamTensor {
    Eigen::MatrixXd value;
    mutable Eigen::MatrixXd grad;  // scratch; zeroed by the optimizer loop
    bool decay = false;            // participates in weight decay
};

/// Named parameter arrays. std::map keeps iteration order stable, which
/// fixes the init RNG consumption order and the checkpoint layout.
class ParamStore {
  public:
    ParamTensor& add(const std::string& name, std::size_t rows, std::size_t cols, bool decay);
    ParamTensor& at(const std::string& name);
    const ParamTensor& at(const std::string& name) const;
    bool has(const std::string& name) const { return items_.count(name) != 0; }

    void zero_grads() const;
    std::size_t count() const { return items_.size(); }
    std::size_t total_entries() const;

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

  private:
    std::map<std::string, ParamTensor> items_;
};

enum class Modality { text, image };

/// Dual pre-norm transformer encoders with Gaussian distribution heads.
/// Heads take [feature, conditioning] where conditioning is the other
/// modality's pooled mean during masked student passes and zero for
/// plain passes.
class Model {
  public:
    EncoderConfig cfg;
    ParamStore params;

    static Model init(const EncoderConfig& cfg, std::uint64_t seed);

    /// Plain no-grad encodings (zero conditioning).
    GaussianSequence encode_text(const TextInput& t, const MaskPlan* plan = nullptr) const;
    GaussianSequence encode_image(const ImageInput& img, const MaskPlan* plan = nullptr) const;

    /// The head alone on externally supplied features (zero conditioning).
    GaussianSequence distribution_head(Modality m, const Eigen::MatrixXd& features) const;

    struct SeqNodes {
        ag::Node* mu = nullptr;
        ag::Node* log_var = nullptr;
    };

    /// Graph-building passes used by training. cond, when given, is the
    /// stop-gradient pooled mean of the other modality. with_grad=false
    /// detaches all parameters.
    SeqNodes build_text(ag::Graph& g, const TextInput& t, const MaskPlan* plan,
                        const Eigen::RowVectorXd* cond, bool with_grad) const;
    SeqNodes build_image(ag::Graph& g, const ImageInput& img, const MaskPlan* plan,
                         const Eigen::RowVectorXd* cond, bool with_grad) const;

  private:
    ag::Node* param_node(ag::Graph& g, const std::string& name, bool with_grad) const;
    ag::Node* encoder_stack(ag::Graph& g, const std::string& prefix, ag::Node* x,
                            bool with_grad) const;
    SeqNodes head(ag::Graph& g, const std::string& prefix, ag::Node* features,
                  const Eigen::RowVectorXd* cond, bool with_grad) const;
};

}  // namespace dmlm
