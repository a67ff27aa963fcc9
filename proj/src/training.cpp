#include "dmlm/training.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

#include <json.hpp>

#include "dmlm/errors.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

void TrainingConfig::validate() const {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw contract_error("TrainingConfig: lambda in [0,1]");
    if (!(text_mask_ratio > 0.0 && text_mask_ratio <= 1.0)) {
        throw contract_error("TrainingConfig: text_mask_ratio in (0,1]");
    }
    if (!(image_base_ratio > 0.0 && image_base_ratio < 1.0)) {
        throw contract_error("TrainingConfig: image_base_ratio in (0,1)");
    }
    if (peak_lr <= 0.0 || encoder_lr <= 0.0) throw contract_error("TrainingConfig: rates positive");
    if (weight_decay < 0.0) throw contract_error("TrainingConfig: weight_decay >= 0");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) {
        throw contract_error("TrainingConfig: warmup_fraction in [0,1)");
    }
    if (batch_size == 0) throw contract_error("TrainingConfig: batch_size >= 1");
    if (epochs == 0 && max_steps == 0) throw contract_error("TrainingConfig: no step budget");
    if (mask_tau <= 0.0) throw contract_error("TrainingConfig: mask_tau positive");
}

TrainingConfig TrainingConfig::paper_scale() {
    TrainingConfig c;
    c.epochs = 100;
    c.batch_size = 128;
    return c;
}

LossBreakdown dmlm_loss(const GaussianSequence& student_text,
                        const GaussianSequence& student_image,
                        const GaussianSequence& teacher_text,
                        const GaussianSequence& teacher_image, const MaskPlan& plan) {
    if (student_text.length() != teacher_text.length() ||
        student_image.length() != teacher_image.length()) {
        throw contract_error("dmlm_loss: student/teacher lengths differ");
    }
    if (plan.text_indices.empty() && plan.image_indices.empty()) {
        throw degenerate_input_error("dmlm_loss: empty mask plan in both modalities");
    }
    LossBreakdown lb;
    for (std::size_t i : plan.text_indices) {
        lb.dmlm_text += kl_diag(student_text.item(i), teacher_text.item(i));
    }
    if (!plan.text_indices.empty()) {
        lb.dmlm_text /= static_cast<double>(plan.text_indices.size());
    }
    for (std::size_t i : plan.image_indices) {
        lb.dmlm_image += kl_diag(student_image.item(i), teacher_image.item(i));
    }
    if (!plan.image_indices.empty()) {
        lb.dmlm_image /= static_cast<double>(plan.image_indices.size());
    }
    lb.dmlm_total = lb.dmlm_text + lb.dmlm_image;
    lb.n_masked_text = plan.text_indices.size();
    lb.n_masked_image = plan.image_indices.size();
    return lb;
}

double align_loss(const std::vector<DiagGaussian>& pooled_text,
                  const std::vector<DiagGaussian>& pooled_image,
                  const std::vector<bool>& pair_mask) {
    if (pooled_text.size() != pooled_image.size() || pooled_text.size() != pair_mask.size()) {
        throw contract_error("align_loss: batch size mismatch");
    }
    double acc = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pair_mask.size(); ++i) {
        if (!pair_mask[i]) continue;
        acc += w2_diag(pooled_text[i], pooled_image[i]);
        ++n;
    }
    if (n == 0) throw degenerate_input_error("align_loss: no matched pairs");
    return acc / static_cast<double>(n);
}

double total_loss(double dmlm_total, double align, double lambda) {
    if (!(lambda >= 0.0 && lambda <= 1.0)) throw contract_error("total_loss: lambda in [0,1]");
    return lambda * dmlm_total + (1.0 - lambda) * align;
}

std::pair<GaussianSequence, GaussianSequence> teacher_targets(const Model& model,
                                                              const TextInput& text,
                                                              const ImageInput& image) {
    return {model.encode_text(text), model.encode_image(image)};
}

double lr_at_step(const TrainingConfig& cfg, std::size_t step, std::size_t total_steps) {
    if (total_steps == 0) throw contract_error("lr_at_step: total_steps must be positive");
    if (step >= total_steps) step = total_steps - 1;
    const auto warmup = static_cast<std::size_t>(
        std::floor(cfg.warmup_fraction * static_cast<double>(total_steps) + 0.5));
    if (warmup > 0 && step < warmup) {
        return cfg.peak_lr * static_cast<double>(step) / static_cast<double>(warmup);
    }
    if (total_steps - 1 <= warmup) return cfg.peak_lr;
    const double progress = static_cast<double>(step - warmup) /
                            static_cast<double>(total_steps - 1 - warmup);
    return cfg.peak_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

bool AdamW::is_head_param(const std::string& name) {
    return name.rfind("text_head.", 0) == 0 || name.rfind("image_head.", 0) == 0;
}

void AdamW::step(ParamStore& params, double head_lr, double encoder_lr, double weight_decay) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
        auto [it, inserted] = state_.try_emplace(name);
        if (inserted) {
            it->second.m = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
            it->second.v = Eigen::MatrixXd::Zero(p.value.rows(), p.value.cols());
        }
        Moments& mo = it->second;
        mo.m = beta1 * mo.m + (1.0 - beta1) * p.grad;
        mo.v = beta2 * mo.v.array().matrix() +
               (1.0 - beta2) * p.grad.cwiseProduct(p.grad);
        const double lr = is_head_param(name) ? head_lr : encoder_lr;
        Eigen::MatrixXd update =
            (mo.m / bc1).array() / ((mo.v / bc2).array().sqrt() + eps);
        if (p.decay && weight_decay > 0.0) update += weight_decay * p.value;
        p.value -= lr * update.matrix();
    }
}

void AdamW::restore(std::size_t t, std::map<std::string, Moments> state) {
    t_ = t;
    state_ = std::move(state);
}

Trainer::Trainer(Model model, TrainingConfig cfg, std::size_t dataset_size)
    : model_(std::move(model)), cfg_(cfg) {
    cfg_.validate();
    if (dataset_size == 0) throw degenerate_input_error("Trainer: empty dataset");
    const std::size_t steps_per_epoch =
        (dataset_size + cfg_.batch_size - 1) / cfg_.batch_size;
    total_steps_ = cfg_.max_steps > 0 ? cfg_.max_steps : cfg_.epochs * steps_per_epoch;
    if (total_steps_ == 0) throw contract_error("Trainer: zero total steps");
}

StepContext Trainer::make_context(const std::vector<PairedSample>& samples,
                                  const Batch& batch) const {
    StepContext ctx;
    const std::size_t b_size = batch.size();
    ctx.texts.reserve(b_size);
    for (std::size_t b = 0; b < b_size; ++b) {
        const BatchMember& m = batch.members[b];
        const PairedSample& s = samples.at(m.sample_index);
        ctx.texts.push_back(m.to_text_input());
        ctx.images.push_back(&s.image);

        const TextInput& text = ctx.texts.back();
        GaussianSequence tt = model_.encode_text(text);
        GaussianSequence ti = model_.encode_image(s.image);

        const SaliencyResult sal = appearance_saliency(ti, tt, text.spans.appearance);
        MaskPlan plan = plan_text_mask(text, cfg_.text_mask_ratio,
                                       Rng::mix(Rng::mix(cfg_.seed, step_), 2 * b));
        plan = plan.merged_with(plan_image_mask(sal.values, cfg_.image_base_ratio,
                                                Rng::mix(Rng::mix(cfg_.seed, step_), 2 * b + 1),
                                                cfg_.mask_tau));

        ctx.cond_for_image.push_back(pool_sequence(tt).mu.transpose());
        ctx.cond_for_text.push_back(pool_sequence(ti).mu.transpose());
        ctx.teacher_text.push_back(std::move(tt));
        ctx.teacher_image.push_back(std::move(ti));
        ctx.plans.push_back(std::move(plan));
    }
    return ctx;
}

namespace {

LossBreakdown run_context(const Model& model, const TrainingConfig& cfg, const StepContext& ctx,
                          bool with_grad, bool detach_students) {
    const std::size_t b_size = ctx.texts.size();
    if (b_size == 0) throw degenerate_input_error("loss: empty batch");
    const double inv_b = 1.0 / static_cast<double>(b_size);

    LossBreakdown lb;
    for (std::size_t b = 0; b < b_size; ++b) {
        ag::Graph g;
        const TextInput& text = ctx.texts[b];
        const ImageInput& image = *ctx.images[b];
        const MaskPlan& plan = ctx.plans[b];

        // Plain passes: alignment path (gradients flow) and, detached,
        // the Eq. 3 targets.
        auto plain_t = model.build_text(g, text, nullptr, nullptr, with_grad);
        auto plain_i = model.build_image(g, image, nullptr, nullptr, with_grad);

        // Student passes conditioned on the other modality's frozen
        // pooled mean.
        auto stud_t = model.build_text(g, text, &plan, &ctx.cond_for_text[b], with_grad);
        auto stud_i = model.build_image(g, image, &plan, &ctx.cond_for_image[b], with_grad);
        ag::Node* stud_t_mu = stud_t.mu;
        ag::Node* stud_t_lv = stud_t.log_var;
        ag::Node* stud_i_mu = stud_i.mu;
        ag::Node* stud_i_lv = stud_i.log_var;
        if (detach_students) {
            stud_t_mu = g.constant(stud_t_mu->val);
            stud_t_lv = g.constant(stud_t_lv->val);
            stud_i_mu = g.constant(stud_i_mu->val);
            stud_i_lv = g.constant(stud_i_lv->val);
        }

        ag::Node* kl_t = g.kl_masked_mean(stud_t_mu, stud_t_lv, ctx.teacher_text[b].mu,
                                          ctx.teacher_text[b].log_var, plan.text_indices);
        ag::Node* kl_i = g.kl_masked_mean(stud_i_mu, stud_i_lv, ctx.teacher_image[b].mu,
                                          ctx.teacher_image[b].log_var, plan.image_indices);
        ag::Node* w2 =
            g.w2_pair(g.pool_mu(plain_t.mu), g.pool_log_var(plain_t.mu, plain_t.log_var),
                      g.pool_mu(plain_i.mu), g.pool_log_var(plain_i.mu, plain_i.log_var));

        ag::Node* dmlm = g.add(kl_t, kl_i);
        ag::Node* total =
            g.add(g.scale(dmlm, cfg.lambda), g.scale(w2, 1.0 - cfg.lambda));

        if (with_grad) g.backward(total, inv_b);

        lb.dmlm_text += kl_t->val(0, 0) * inv_b;
        lb.dmlm_image += kl_i->val(0, 0) * inv_b;
        lb.align += w2->val(0, 0) * inv_b;
        lb.total += total->val(0, 0) * inv_b;
        lb.n_masked_text += plan.text_indices.size();
        lb.n_masked_image += plan.image_indices.size();
    }
    lb.dmlm_total = lb.dmlm_text + lb.dmlm_image;
    return lb;
}

}  // namespace

LossBreakdown Trainer::loss_with_context(const StepContext& ctx, bool with_grad) const {
    if (with_grad) model_.params.zero_grads();
    return run_context(model_, cfg_, ctx, with_grad, false);
}

LossBreakdown Trainer::loss_with_detached_students(const StepContext& ctx) const {
    model_.params.zero_grads();
    // Alignment gradients are not part of the teacher-isolation question;
    // weight the loss entirely onto the KL term.
    TrainingConfig kl_only = cfg_;
    kl_only.lambda = 1.0;
    return run_context(model_, kl_only, ctx, true, true);
}

namespace {

bool params_all_finite(const ParamStore& params) {
    for (const auto& [name, p] : params) {
        if (!p.value.allFinite()) return false;
    }
    return true;
}

}  // namespace

LossBreakdown Trainer::train_step(const std::vector<PairedSample>& samples, const Batch& batch) {
    LossBreakdown lb;
    try {
        const StepContext ctx = make_context(samples, batch);
        lb = loss_with_context(ctx, true);
    } catch (const contract_error& e) {
        // Diverged parameters surface as non-finite encoder outputs,
        // which the distribution types reject; report those as a
        // numerical abort, not a caller bug.
        if (!params_all_finite(model_.params)) {
            throw numerical_error("non-finite parameters at step " + std::to_string(step_) +
                                  ": " + e.what());
        }
        throw;
    }
    if (!std::isfinite(lb.total)) {
        throw numerical_error("non-finite loss at step " + std::to_string(step_) + ": " +
                              MetricsLog::format_record(step_, current_lr(), lb));
    }
    opt_.step(model_.params, current_lr(), cfg_.encoder_lr, cfg_.weight_decay);
    ++step_;
    return lb;
}

MetricsLog::MetricsLog(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw io_error("cannot open metrics log: " + path);
}

std::string MetricsLog::format_record(std::size_t step, double lr, const LossBreakdown& lb) {
    std::ostringstream ss;
    ss << "{\"step\":" << step << ",\"lr\":" << format_double(lr)
       << ",\"dmlm_text\":" << format_double(lb.dmlm_text)
       << ",\"dmlm_image\":" << format_double(lb.dmlm_image)
       << ",\"align\":" << format_double(lb.align) << ",\"total\":" << format_double(lb.total)
       << ",\"n_masked_text\":" << lb.n_masked_text
       << ",\"n_masked_image\":" << lb.n_masked_image << "}";
    return ss.str();
}

void MetricsLog::append(std::size_t step, double lr, const LossBreakdown& lb) {
    out_ << format_record(step, lr, lb) << "\n";
    out_.flush();
}

std::vector<LossBreakdown> train_loop(Trainer& trainer, const std::vector<PairedSample>& samples,
                                      MetricsLog* log) {
    std::vector<LossBreakdown> history;
    const TrainingConfig& cfg = trainer.config();
    std::size_t epoch = 0;
    while (trainer.step() < trainer.total_steps()) {
        const auto batches = make_batches(samples, cfg.batch_size, cfg.seed, true, epoch);
        for (const Batch& b : batches) {
            if (trainer.step() >= trainer.total_steps()) break;
            const std::size_t step = trainer.step();
            const double lr = trainer.current_lr();
            const LossBreakdown lb = trainer.train_step(samples, b);
            if (log) log->append(step, lr, lb);
            history.push_back(lb);
        }
        ++epoch;
    }
    return history;
}

// --- checkpoint -----------------------------------------------------------

namespace {

constexpr char kCkptMagic[9] = "DMLMCKP1";

nlohmann::json training_config_json(const TrainingConfig& c) {
    nlohmann::json j;
    j["lambda"] = c.lambda;
    j["text_mask_ratio"] = c.text_mask_ratio;
    j["image_base_ratio"] = c.image_base_ratio;
    j["mask_tau"] = c.mask_tau;
    j["epochs"] = c.epochs;
    j["max_steps"] = c.max_steps;
    j["batch_size"] = c.batch_size;
    j["peak_lr"] = c.peak_lr;
    j["encoder_lr"] = c.encoder_lr;
    j["weight_decay"] = c.weight_decay;
    j["warmup_fraction"] = c.warmup_fraction;
    j["seed"] = c.seed;
    j["text_mode"] = c.text_mode == TextMode::structured ? "structured" : "findings_only";
    return j;
}

TrainingConfig training_config_from(const nlohmann::json& j) {
    TrainingConfig c;
    c.lambda = j.at("lambda").get<double>();
    c.text_mask_ratio = j.at("text_mask_ratio").get<double>();
    c.image_base_ratio = j.at("image_base_ratio").get<double>();
    c.mask_tau = j.value("mask_tau", c.mask_tau);
    c.epochs = j.at("epochs").get<std::size_t>();
    c.max_steps = j.value("max_steps", std::size_t{0});
    c.batch_size = j.at("batch_size").get<std::size_t>();
    c.peak_lr = j.at("peak_lr").get<double>();
    c.encoder_lr = j.at("encoder_lr").get<double>();
    c.weight_decay = j.at("weight_decay").get<double>();
    c.warmup_fraction = j.at("warmup_fraction").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    const std::string mode = j.value("text_mode", "structured");
    if (mode == "structured") {
        c.text_mode = TextMode::structured;
    } else if (mode == "findings_only") {
        c.text_mode = TextMode::findings_only;
    } else {
        throw io_error("unknown text_mode: " + mode);
    }
    c.validate();
    return c;
}

nlohmann::json encoder_config_json(const EncoderConfig& c) {
    nlohmann::json j;
    j["d_model"] = c.d_model;
    j["n_layers"] = c.n_layers;
    j["n_heads"] = c.n_heads;
    j["vocab_size"] = c.vocab_size;
    j["max_len"] = c.max_len;
    j["patch_dim"] = c.patch_dim;
    return j;
}

EncoderConfig encoder_config_from(const nlohmann::json& j) {
    EncoderConfig c;
    c.d_model = j.at("d_model").get<std::size_t>();
    c.n_layers = j.at("n_layers").get<std::size_t>();
    c.n_heads = j.at("n_heads").get<std::size_t>();
    c.vocab_size = j.at("vocab_size").get<std::size_t>();
    c.max_len = j.at("max_len").get<std::size_t>();
    c.patch_dim = j.at("patch_dim").get<std::size_t>();
    return c;
}

void put_array(std::ostringstream& out, const std::string& name, const Eigen::MatrixXd& m) {
    const auto name_len = static_cast<std::uint32_t>(name.size());
    out.write(reinterpret_cast<const char*>(&name_len), sizeof(name_len));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    const std::uint64_t rows = static_cast<std::uint64_t>(m.rows());
    const std::uint64_t cols = static_cast<std::uint64_t>(m.cols());
    out.write(reinterpret_cast<const char*>(&rows), sizeof(rows));
    out.write(reinterpret_cast<const char*>(&cols), sizeof(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
            const double v = m(r, c);
            out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
    }
}

struct ArchiveReader {
    const std::string& blob;
    std::size_t off = 0;

    void read_bytes(void* dst, std::size_t n, const char* what) {
        if (off + n > blob.size()) {
            throw io_error("checkpoint truncated reading " + std::string(what) + " at offset " +
                           std::to_string(off));
        }
        std::memcpy(dst, blob.data() + off, n);
        off += n;
    }
    std::string read_string(std::size_t n, const char* what) {
        std::string s(n, '\0');
        read_bytes(s.data(), n, what);
        return s;
    }
};

}  // namespace

std::string training_config_to_json(const TrainingConfig& cfg) {
    return training_config_json(cfg).dump(2) + "\n";
}

TrainingConfig training_config_from_json(const std::string& text) {
    try {
        return training_config_from(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
        throw io_error(std::string("training config parse failure: ") + e.what());
    }
}

void save_checkpoint(const std::string& path, const Model& model, const TrainingConfig& cfg,
                     std::size_t step, std::uint64_t vocab_hash, const AdamW* opt) {
    nlohmann::json meta;
    meta["encoder"] = encoder_config_json(model.cfg);
    meta["training"] = training_config_json(cfg);
    meta["step"] = step;
    meta["vocab_hash"] = to_hex(vocab_hash);
    meta["opt_t"] = opt ? opt->t() : 0;
    const std::string meta_str = meta.dump();

    std::ostringstream out;
    out.write(kCkptMagic, 8);
    const std::uint64_t meta_len = meta_str.size();
    out.write(reinterpret_cast<const char*>(&meta_len), sizeof(meta_len));
    out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

    std::uint64_t n_arrays = model.params.count();
    if (opt) n_arrays += 2 * opt->state().size();
    out.write(reinterpret_cast<const char*>(&n_arrays), sizeof(n_arrays));
    for (const auto& [name, p] : model.params) put_array(out, name, p.value);
    if (opt) {
        for (const auto& [name, mo] : opt->state()) {
            put_array(out, "opt.m." + name, mo.m);
            put_array(out, "opt.v." + name, mo.v);
        }
    }
    atomic_write_file(path, out.str());
}

Checkpoint load_checkpoint(const std::string& path) {
    const std::string blob = read_file(path);
    ArchiveReader in{blob};

    char magic[8];
    in.read_bytes(magic, 8, "magic");
    if (std::memcmp(magic, kCkptMagic, 8) != 0) {
        throw io_error("checkpoint " + path + ": bad magic at offset 0");
    }
    std::uint64_t meta_len = 0;
    in.read_bytes(&meta_len, sizeof(meta_len), "meta length");
    const std::string meta_str = in.read_string(meta_len, "metadata");

    Checkpoint ck;
    try {
        const nlohmann::json meta = nlohmann::json::parse(meta_str);
        ck.encoder_cfg = encoder_config_from(meta.at("encoder"));
        ck.train_cfg = training_config_from(meta.at("training"));
        ck.step = meta.at("step").get<std::size_t>();
        ck.vocab_hash = std::stoull(meta.at("vocab_hash").get<std::string>(), nullptr, 16);
        ck.opt_t = meta.value("opt_t", std::size_t{0});
    } catch (const nlohmann::json::exception& e) {
        throw io_error("checkpoint " + path + ": metadata corrupt: " + e.what());
    }

    ck.model = Model::init(ck.encoder_cfg, 0);
    std::uint64_t n_arrays = 0;
    in.read_bytes(&n_arrays, sizeof(n_arrays), "array count");
    for (std::uint64_t a = 0; a < n_arrays; ++a) {
        std::uint32_t name_len = 0;
        in.read_bytes(&name_len, sizeof(name_len), "array name length");
        const std::string name = in.read_string(name_len, "array name");
        std::uint64_t rows = 0, cols = 0;
        in.read_bytes(&rows, sizeof(rows), "array rows");
        in.read_bytes(&cols, sizeof(cols), "array cols");
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            for (Eigen::Index c = 0; c < m.cols(); ++c) {
                double v = 0.0;
                in.read_bytes(&v, sizeof(v), "array data");
                m(r, c) = v;
            }
        }
        if (name.rfind("opt.m.", 0) == 0) {
            ck.opt_state[name.substr(6)].m = std::move(m);
        } else if (name.rfind("opt.v.", 0) == 0) {
            ck.opt_state[name.substr(6)].v = std::move(m);
        } else {
            ParamTensor& p = ck.model.params.at(name);
            if (p.value.rows() != m.rows() || p.value.cols() != m.cols()) {
                throw io_error("checkpoint " + path + ": shape mismatch for " + name);
            }
            p.value = std::move(m);
        }
    }
    if (in.off != blob.size()) {
        throw io_error("checkpoint " + path + ": trailing bytes at offset " +
                       std::to_string(in.off));
    }
    return ck;
}

}  // namespace dmlm
