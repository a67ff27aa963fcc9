#include "dmlm/encoder.hpp"

#include <cmath>

#include "dmlm/errors.hpp"
#include "dmlm/rng.hpp"

namespace dmlm {

void EncoderConfig::validate() const {
    if (d_model == 0 || n_layers == 0 || n_heads == 0 || max_len == 0 || patch_dim == 0) {
        throw contract_error("EncoderConfig: all sizes must be positive");
    }
    if (d_model % n_heads != 0) throw contract_error("EncoderConfig: d_model % n_heads != 0");
    if (vocab_size == 0) throw contract_error("EncoderConfig: vocab_size must be set");
}

EncoderConfig EncoderConfig::paper_scale() {
    EncoderConfig c;
    c.d_model = 768;
    c.n_layers = 12;
    c.n_heads = 12;
    c.max_len = 512;
    return c;
}

ParamTensor& ParamStore::add(const std::string& name, std::size_t rows, std::size_t cols,
                             bool decay) {
    auto [it, inserted] = items_.try_emplace(name);
    if (!inserted) throw contract_error("ParamStore: duplicate parameter " + name);
    it->second.value = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows),
                                             static_cast<Eigen::Index>(cols));
    it->second.grad = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(rows),
                                            static_cast<Eigen::Index>(cols));
    it->second.decay = decay;
    return it->second;
}

ParamTensor& ParamStore::at(const std::string& name) {
    auto it = items_.find(name);
    if (it == items_.end()) throw contract_error("ParamStore: unknown parameter " + name);
    return it->second;
}

const ParamTensor& ParamStore::at(const std::string& name) const {
    auto it = items_.find(name);
    if (it == items_.end()) throw contract_error("ParamStore: unknown parameter " + name);
    return it->second;
}

void ParamStore::zero_grads() const {
    for (const auto& [name, p] : items_) p.grad.setZero();
}

std::size_t ParamStore::total_entries() const {
    std::size_t n = 0;
    for (const auto& [name, p] : items_) n += static_cast<std::size_t>(p.value.size());
    return n;
}

namespace {

void fill_normal(Eigen::MatrixXd& m, double stddev, Rng& rng) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = stddev * rng.normal();
}

void fill_xavier(Eigen::MatrixXd& m, Rng& rng, double gain = 1.0) {
    const double a =
        gain * std::sqrt(6.0 / static_cast<double>(m.rows() + m.cols()));
    for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = a * (2.0 * rng.uniform01() - 1.0);
}

void add_encoder_params(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg) {
    const std::size_t d = cfg.d_model;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        ps.add(lp + ".ln1.g", 1, d, false);
        ps.add(lp + ".ln1.b", 1, d, false);
        ps.add(lp + ".attn.wq", d, d, true);
        ps.add(lp + ".attn.bq", 1, d, false);
        ps.add(lp + ".attn.wk", d, d, true);
        ps.add(lp + ".attn.bk", 1, d, false);
        ps.add(lp + ".attn.wv", d, d, true);
        ps.add(lp + ".attn.bv", 1, d, false);
        ps.add(lp + ".attn.wo", d, d, true);
        ps.add(lp + ".attn.bo", 1, d, false);
        ps.add(lp + ".ln2.g", 1, d, false);
        ps.add(lp + ".ln2.b", 1, d, false);
        ps.add(lp + ".mlp.w1", d, 4 * d, true);
        ps.add(lp + ".mlp.b1", 1, 4 * d, false);
        ps.add(lp + ".mlp.w2", 4 * d, d, true);
        ps.add(lp + ".mlp.b2", 1, d, false);
    }
    ps.add(prefix + ".final_ln.g", 1, d, false);
    ps.add(prefix + ".final_ln.b", 1, d, false);
}

void add_head_params(ParamStore& ps, const std::string& prefix, const EncoderConfig& cfg) {
    const std::size_t d = cfg.d_model;
    ps.add(prefix + ".mu.w", 2 * d, d, true);
    ps.add(prefix + ".mu.b", 1, d, false);
    ps.add(prefix + ".lv.w", 2 * d, d, true);
    ps.add(prefix + ".lv.b", 1, d, false);
}

}  // namespace

Model Model::init(const EncoderConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Model m;
    m.cfg = cfg;
    ParamStore& ps = m.params;

    ps.add("text.tok_emb", cfg.vocab_size, cfg.d_model, false);
    ps.add("text.pos_emb", cfg.max_len, cfg.d_model, false);
    ps.add("text.mask_emb", 1, cfg.d_model, false);
    add_encoder_params(ps, "text", cfg);

    ps.add("image.patch_proj.w", cfg.patch_dim, cfg.d_model, true);
    ps.add("image.patch_proj.b", 1, cfg.d_model, false);
    ps.add("image.pos_emb", cfg.max_len, cfg.d_model, false);
    ps.add("image.mask_emb", 1, cfg.d_model, false);
    add_encoder_params(ps, "image", cfg);

    add_head_params(ps, "text_head", cfg);
    add_head_params(ps, "image_head", cfg);

    // Deterministic initialization in name order.
    Rng rng(seed);
    for (auto& [name, p] : ps) {
        const bool is_emb = name.ends_with("tok_emb") || name.ends_with("mask_emb");
        const bool is_pos = name.ends_with("pos_emb");
        const bool is_ln_gain = name.ends_with("ln.g") || name.ends_with("ln1.g") ||
                                name.ends_with("ln2.g");
        const bool is_bias = name.ends_with(".b") || name.ends_with(".bq") ||
                             name.ends_with(".bk") || name.ends_with(".bv") ||
                             name.ends_with(".bo") || name.ends_with(".b1") ||
                             name.ends_with(".b2") || name.ends_with("ln1.b") ||
                             name.ends_with("ln2.b");
        const bool is_logvar_w = name.find("_head.lv.w") != std::string::npos;
        if (is_ln_gain) {
            p.value.setOnes();
        } else if (is_bias) {
            p.value.setZero();
        } else if (is_emb) {
            fill_normal(p.value, 0.02, rng);
        } else if (is_pos) {
            // Strong enough that a patch or token is identifiable by its
            // position downstream of the attention mixing.
            fill_normal(p.value, 0.2, rng);
        } else if (is_logvar_w) {
            // Starts the variance outputs near 0 (unit variance).
            fill_xavier(p.value, rng, 0.01);
        } else {
            fill_xavier(p.value, rng);
        }
    }
    return m;
}

ag::Node* Model::param_node(ag::Graph& g, const std::string& name, bool with_grad) const {
    const ParamTensor& p = params.at(name);
    return g.param(p.value, with_grad ? &p.grad : nullptr);
}

ag::Node* Model::encoder_stack(ag::Graph& g, const std::string& prefix, ag::Node* x,
                               bool with_grad) const {
    const std::size_t d = cfg.d_model;
    const std::size_t dh = d / cfg.n_heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const std::string lp = prefix + ".layer" + std::to_string(l);
        ag::Node* h = g.layer_norm(x, param_node(g, lp + ".ln1.g", with_grad),
                                   param_node(g, lp + ".ln1.b", with_grad));
        ag::Node* q = g.add_rowvec(g.matmul(h, param_node(g, lp + ".attn.wq", with_grad)),
                                   param_node(g, lp + ".attn.bq", with_grad));
        ag::Node* k = g.add_rowvec(g.matmul(h, param_node(g, lp + ".attn.wk", with_grad)),
                                   param_node(g, lp + ".attn.bk", with_grad));
        ag::Node* v = g.add_rowvec(g.matmul(h, param_node(g, lp + ".attn.wv", with_grad)),
                                   param_node(g, lp + ".attn.bv", with_grad));
        ag::Node* heads_out = nullptr;
        for (std::size_t hd = 0; hd < cfg.n_heads; ++hd) {
            ag::Node* qh = g.slice_cols(q, hd * dh, dh);
            ag::Node* kh = g.slice_cols(k, hd * dh, dh);
            ag::Node* vh = g.slice_cols(v, hd * dh, dh);
            ag::Node* scores = g.scale(g.matmul(qh, g.transpose(kh)), att_scale);
            ag::Node* att = g.softmax_rows(scores);
            ag::Node* oh = g.matmul(att, vh);
            heads_out = heads_out ? g.concat_cols(heads_out, oh) : oh;
        }
        ag::Node* attn = g.add_rowvec(g.matmul(heads_out, param_node(g, lp + ".attn.wo", with_grad)),
                                      param_node(g, lp + ".attn.bo", with_grad));
        x = g.add(x, attn);

        ag::Node* h2 = g.layer_norm(x, param_node(g, lp + ".ln2.g", with_grad),
                                    param_node(g, lp + ".ln2.b", with_grad));
        ag::Node* m1 = g.add_rowvec(g.matmul(h2, param_node(g, lp + ".mlp.w1", with_grad)),
                                    param_node(g, lp + ".mlp.b1", with_grad));
        ag::Node* m2 = g.add_rowvec(g.matmul(g.gelu(m1), param_node(g, lp + ".mlp.w2", with_grad)),
                                    param_node(g, lp + ".mlp.b2", with_grad));
        x = g.add(x, m2);
    }
    return g.layer_norm(x, param_node(g, prefix + ".final_ln.g", with_grad),
                        param_node(g, prefix + ".final_ln.b", with_grad));
}

Model::SeqNodes Model::head(ag::Graph& g, const std::string& prefix, ag::Node* features,
                            const Eigen::RowVectorXd* cond, bool with_grad) const {
    const Eigen::Index rows = features->val.rows();
    Eigen::MatrixXd cond_mat =
        Eigen::MatrixXd::Zero(rows, static_cast<Eigen::Index>(cfg.d_model));
    if (cond) {
        if (cond->size() != static_cast<Eigen::Index>(cfg.d_model)) {
            throw contract_error("head: conditioning vector must have length d_model");
        }
        cond_mat.rowwise() = *cond;
    }
    ag::Node* fused = g.concat_cols(features, g.constant(std::move(cond_mat)));
    SeqNodes out;
    out.mu = g.add_rowvec(g.matmul(fused, param_node(g, prefix + ".mu.w", with_grad)),
                          param_node(g, prefix + ".mu.b", with_grad));
    ag::Node* lv_raw = g.add_rowvec(g.matmul(fused, param_node(g, prefix + ".lv.w", with_grad)),
                                    param_node(g, prefix + ".lv.b", with_grad));
    out.log_var = g.clamp(lv_raw, kLogVarMin, kLogVarMax);
    return out;
}

Model::SeqNodes Model::build_text(ag::Graph& g, const TextInput& t, const MaskPlan* plan,
                                  const Eigen::RowVectorXd* cond, bool with_grad) const {
    t.validate(cfg.vocab_size);
    const std::size_t len = t.length();
    if (len > cfg.max_len) throw contract_error("build_text: sequence exceeds max_len");
    if (plan) {
        for (std::size_t i : plan->text_indices) {
            if (i >= len) throw contract_error("build_text: mask index out of range");
            if (t.special[i]) throw contract_error("build_text: mask index hits special token");
        }
    }

    ag::Node* x = g.gather_rows(param_node(g, "text.tok_emb", with_grad), t.token_ids);
    if (plan && !plan->text_indices.empty()) {
        x = g.row_replace(x, plan->text_indices, param_node(g, "text.mask_emb", with_grad));
    }
    std::vector<int> pos_ids(len);
    for (std::size_t i = 0; i < len; ++i) pos_ids[i] = static_cast<int>(i);
    x = g.add(x, g.gather_rows(param_node(g, "text.pos_emb", with_grad), pos_ids));
    ag::Node* features = encoder_stack(g, "text", x, with_grad);
    return head(g, "text_head", features, cond, with_grad);
}

Model::SeqNodes Model::build_image(ag::Graph& g, const ImageInput& img, const MaskPlan* plan,
                                   const Eigen::RowVectorXd* cond, bool with_grad) const {
    img.validate();
    const std::size_t n_patches = img.n_patches();
    if (n_patches > cfg.max_len) throw contract_error("build_image: patch count exceeds max_len");
    if (img.patches.cols() != static_cast<Eigen::Index>(cfg.patch_dim)) {
        throw contract_error("build_image: patch_dim mismatch");
    }
    if (plan) {
        for (std::size_t i : plan->image_indices) {
            if (i >= n_patches) throw contract_error("build_image: mask index out of range");
        }
    }

    ag::Node* x = g.add_rowvec(
        g.matmul(g.constant(img.patches), param_node(g, "image.patch_proj.w", with_grad)),
        param_node(g, "image.patch_proj.b", with_grad));
    if (plan && !plan->image_indices.empty()) {
        x = g.row_replace(x, plan->image_indices, param_node(g, "image.mask_emb", with_grad));
    }
    std::vector<int> pos_ids(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i) pos_ids[i] = static_cast<int>(i);
    x = g.add(x, g.gather_rows(param_node(g, "image.pos_emb", with_grad), pos_ids));
    ag::Node* features = encoder_stack(g, "image", x, with_grad);
    return head(g, "image_head", features, cond, with_grad);
}

GaussianSequence Model::encode_text(const TextInput& t, const MaskPlan* plan) const {
    ag::Graph g;
    SeqNodes n = build_text(g, t, plan, nullptr, false);
    return GaussianSequence(n.mu->val, n.log_var->val);
}

GaussianSequence Model::encode_image(const ImageInput& img, const MaskPlan* plan) const {
    ag::Graph g;
    SeqNodes n = build_image(g, img, plan, nullptr, false);
    return GaussianSequence(n.mu->val, n.log_var->val);
}

GaussianSequence Model::distribution_head(Modality m, const Eigen::MatrixXd& features) const {
    if (!features.allFinite()) throw contract_error("distribution_head: non-finite features");
    if (features.cols() != static_cast<Eigen::Index>(cfg.d_model)) {
        throw contract_error("distribution_head: feature width must be d_model");
    }
    ag::Graph g;
    ag::Node* f = g.constant(features);
    SeqNodes n = head(g, m == Modality::text ? "text_head" : "image_head", f, nullptr, false);
    return GaussianSequence(n.mu->val, n.log_var->val);
}

}  // namespace dmlm
