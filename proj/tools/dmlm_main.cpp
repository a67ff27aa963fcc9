// dmlm: structured-report generation, synthetic corpus synthesis,
// distribution-based masked pretraining, zero-shot evaluation, and the
// numeric self-test, behind one executable.
//
// Exit codes: 0 success, 2 user/input error, 3 numerical failure.

#include <filesystem>
#include <iostream>
#include <optional>

#include "dmlm/data.hpp"
#include "dmlm/errors.hpp"
#include "dmlm/evaluate.hpp"
#include "dmlm/llm_client.hpp"
#include "dmlm/manifest.hpp"
#include "dmlm/masking.hpp"
#include "dmlm/reports.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/selftest.hpp"
#include "dmlm/training.hpp"
#include "dmlm/util.hpp"
#include "dmlm/vocab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

namespace {

using namespace dmlm;

constexpr int kExitOk = 0;
constexpr int kExitUserError = 2;
constexpr int kExitNumerical = 3;

Lexicon load_lexicon(const std::string& path) {
    return path.empty() ? Lexicon::builtin() : Lexicon::load(path);
}

struct EncoderOptions {
    std::size_t d_model = 64;
    std::size_t n_layers = 2;
    std::size_t n_heads = 4;
    std::size_t max_len = 128;
};

EncoderOptions encoder_options_from(const nlohmann::json& j) {
    EncoderOptions e;
    e.d_model = j.value("d_model", e.d_model);
    e.n_layers = j.value("n_layers", e.n_layers);
    e.n_heads = j.value("n_heads", e.n_heads);
    e.max_len = j.value("max_len", e.max_len);
    return e;
}

nlohmann::json encoder_options_json(const EncoderOptions& e) {
    return {{"d_model", e.d_model},
            {"n_layers", e.n_layers},
            {"n_heads", e.n_heads},
            {"max_len", e.max_len}};
}

int cmd_reportgen(const std::string& disease, const std::vector<std::string>& findings,
                  const std::string& backend, const std::string& out_path,
                  const std::string& lexicon_path, bool verbose) {
    if (backend != "template" && backend != "llm") {
        throw contract_error("backend must be 'template' or 'llm'");
    }
    const Lexicon lexicon = load_lexicon(lexicon_path);
    if (verbose) {
        std::cout << "definition prompt: " << render_definition_prompt(disease) << "\n";
        std::cout << "appearance prompt: " << render_appearance_prompt(disease) << "\n";
    }
    LlmClient client(LlmConfig::from_env());
    const auto gen = generate_report(disease, findings,
                                     backend == "llm" ? ReportBackend::llm
                                                      : ReportBackend::template_backend,
                                     lexicon, &client);
    for (const auto& w : gen.warnings) std::cerr << "warning: " << w << "\n";
    const std::string serialized = serialize_report(gen.report);
    if (out_path.empty()) {
        std::cout << serialized;
    } else {
        atomic_write_file(out_path, serialized);
        std::cout << "report written to " << out_path << "\n";
    }
    return kExitOk;
}

int cmd_datagen(const std::string& spec_path, const std::string& out_dir,
                const std::string& lexicon_path, std::optional<std::uint64_t> seed_override) {
    DatasetSpec spec = DatasetSpec::from_json_file(spec_path);
    if (seed_override) spec.seed = *seed_override;
    const Lexicon lexicon = load_lexicon(lexicon_path);

    nlohmann::json cfg;
    cfg["spec"] = nlohmann::json::parse(read_file(spec_path));
    cfg["spec"]["seed"] = spec.seed;
    cfg["lexicon"] = lexicon_path.empty() ? "builtin" : lexicon_path;
    write_manifest(RunManifest::make("datagen", cfg, spec.seed, {{"dataset", out_dir}}), out_dir);

    const Dataset ds = generate_dataset(spec, lexicon);
    save_dataset(ds, out_dir);
    std::cout << "generated " << ds.samples.size() << " samples over " << spec.n_classes
              << " classes into " << out_dir << "\n";
    return kExitOk;
}

int cmd_pretrain(const std::string& config_path, const std::string& data_dir,
                 const std::string& out_dir, std::optional<std::uint64_t> seed_override,
                 const std::string& resume_path) {
    nlohmann::json file_cfg = nlohmann::json::object();
    if (!config_path.empty()) {
        try {
            file_cfg = nlohmann::json::parse(read_file(config_path));
        } catch (const nlohmann::json::exception& e) {
            throw io_error("config parse failure in " + config_path + ": " + e.what());
        }
    }
    TrainingConfig tcfg = file_cfg.contains("training")
                              ? training_config_from_json(file_cfg["training"].dump())
                              : TrainingConfig{};
    if (seed_override) tcfg.seed = *seed_override;
    const EncoderOptions eopts = encoder_options_from(
        file_cfg.contains("encoder") ? file_cfg["encoder"] : nlohmann::json::object());

    const Dataset ds = load_dataset(data_dir);
    const Vocab vocab = Vocab::build(corpus_texts(ds));
    const auto samples = tokenize_dataset(ds, vocab, tcfg.text_mode, eopts.max_len);

    EncoderConfig ecfg;
    ecfg.d_model = eopts.d_model;
    ecfg.n_layers = eopts.n_layers;
    ecfg.n_heads = eopts.n_heads;
    ecfg.max_len = eopts.max_len;
    ecfg.vocab_size = vocab.size();
    ecfg.patch_dim = ds.spec.patch_dim;
    ecfg.validate();

    // Everything needed to reproduce the run, defaults materialized.
    nlohmann::json cfg;
    cfg["training"] = nlohmann::json::parse(training_config_to_json(tcfg));
    cfg["encoder"] = encoder_options_json(eopts);
    cfg["encoder"]["vocab_size"] = ecfg.vocab_size;
    cfg["encoder"]["patch_dim"] = ecfg.patch_dim;
    cfg["data"] = data_dir;
    cfg["resume"] = resume_path;
    write_manifest(RunManifest::make("pretrain", cfg, tcfg.seed,
                                     {{"checkpoint", out_dir + "/checkpoint.bin"},
                                      {"metrics", out_dir + "/metrics.jsonl"},
                                      {"vocab", out_dir + "/vocab.txt"}}),
                   out_dir);
    vocab.save(out_dir + "/vocab.txt");

    Model model = Model::init(ecfg, Rng::mix(tcfg.seed, 0x6d6f64656cULL));
    std::size_t start_step = 0;
    std::optional<Checkpoint> resume;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        if (!(resume->encoder_cfg == ecfg)) {
            throw config_mismatch_error(
                "resume checkpoint encoder config differs from run config");
        }
        if (resume->vocab_hash != vocab.hash()) {
            throw config_mismatch_error("resume checkpoint vocab hash " +
                                        to_hex(resume->vocab_hash) + " != dataset vocab " +
                                        to_hex(vocab.hash()));
        }
        model = resume->model;
        start_step = resume->step;
    }

    Trainer trainer(std::move(model), tcfg, samples.size());
    trainer.set_step(start_step);
    if (resume) trainer.optimizer().restore(resume->opt_t, resume->opt_state);

    MetricsLog log(out_dir + "/metrics.jsonl");
    train_loop(trainer, samples, &log);
    save_checkpoint(out_dir + "/checkpoint.bin", trainer.model(), tcfg, trainer.step(),
                    vocab.hash(), &trainer.optimizer());
    std::cout << "trained " << trainer.step() << " steps; checkpoint at " << out_dir
              << "/checkpoint.bin\n";
    return kExitOk;
}

int cmd_eval(const std::string& checkpoint_path, const std::string& data_dir,
             const std::string& out_dir, std::string vocab_path, const std::string& score_rule,
             const std::string& lexicon_path, std::optional<std::uint64_t> seed_override) {
    if (score_rule != "w2" && score_rule != "kl") {
        throw contract_error("score rule must be 'w2' or 'kl'");
    }
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (vocab_path.empty()) {
        vocab_path =
            (std::filesystem::path(checkpoint_path).parent_path() / "vocab.txt").string();
    }
    const Vocab vocab = Vocab::load(vocab_path);
    if (vocab.hash() != ck.vocab_hash) {
        throw config_mismatch_error("vocab hash mismatch: checkpoint has " +
                                    to_hex(ck.vocab_hash) + ", " + vocab_path + " has " +
                                    to_hex(vocab.hash()));
    }

    const Dataset ds = load_dataset(data_dir);
    const Lexicon lexicon = load_lexicon(lexicon_path);
    const auto samples =
        tokenize_dataset(ds, vocab, ck.train_cfg.text_mode, ck.encoder_cfg.max_len);

    nlohmann::json cfg;
    cfg["checkpoint"] = checkpoint_path;
    cfg["data"] = data_dir;
    cfg["vocab"] = vocab_path;
    cfg["score_rule"] = score_rule;
    cfg["text_mode"] =
        ck.train_cfg.text_mode == TextMode::structured ? "structured" : "findings_only";
    const std::uint64_t seed = seed_override.value_or(ck.train_cfg.seed);
    write_manifest(RunManifest::make("eval", cfg, seed,
                                     {{"result_json", out_dir + "/eval.json"},
                                      {"result_text", out_dir + "/eval.txt"}}),
                   out_dir);

    const auto prompts = build_class_prompts(lexicon, ds.spec.n_classes, vocab,
                                             ck.encoder_cfg.max_len, ck.train_cfg.text_mode);
    const auto scores = score_dataset(ck.model, samples, prompts, 1.0,
                                      score_rule == "w2" ? ScoreRule::w2 : ScoreRule::kl);
    std::vector<std::size_t> labels;
    labels.reserve(samples.size());
    for (const auto& s : samples) labels.push_back(s.label);
    const EvalResult result = compute_metrics(scores, labels);

    write_eval_result(out_dir + "/eval.json", out_dir + "/eval.txt", result, prompts,
                      config_hash_of(cfg));
    std::cout << "macro AUC " << result.auc << "  macro F1 " << result.f1 << "  ACC "
              << result.acc << "\n";
    for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
    return kExitOk;
}

int cmd_selftest() {
    const auto entries = run_selftest();
    return selftest_report(std::cout, entries) ? kExitOk : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distribution-based masked image-language modeling toolkit"};
    app.require_subcommand(1);

    auto* rg = app.add_subcommand("reportgen", "generate one structured report");
    std::string rg_disease, rg_backend = "template", rg_out, rg_lexicon;
    std::vector<std::string> rg_findings;
    bool rg_verbose = false;
    rg->add_option("--disease", rg_disease, "disease name")->required();
    rg->add_option("--findings", rg_findings, "finding phrases (repeatable)");
    rg->add_option("--backend", rg_backend, "template | llm");
    rg->add_option("--out", rg_out, "output file (stdout when omitted)");
    rg->add_option("--lexicon", rg_lexicon, "lexicon json (builtin when omitted)");
    rg->add_flag("--verbose", rg_verbose, "print the rendered prompts");

    auto* dg = app.add_subcommand("datagen", "synthesize a paired image-report corpus");
    std::string dg_spec, dg_out, dg_lexicon;
    std::optional<std::uint64_t> dg_seed;
    dg->add_option("--spec", dg_spec, "dataset spec json")->required();
    dg->add_option("--out", dg_out, "output directory")->required();
    dg->add_option("--lexicon", dg_lexicon, "lexicon json (builtin when omitted)");
    dg->add_option("--seed", dg_seed, "override the spec seed");

    auto* pt = app.add_subcommand("pretrain", "run masked image-language pretraining");
    std::string pt_config, pt_data, pt_out, pt_resume;
    std::optional<std::uint64_t> pt_seed;
    pt->add_option("--config", pt_config, "run config json (defaults when omitted)");
    pt->add_option("--data", pt_data, "training dataset directory")->required();
    pt->add_option("--out", pt_out, "output directory")->required();
    pt->add_option("--seed", pt_seed, "override the training seed");
    pt->add_option("--resume", pt_resume, "checkpoint to resume from");

    auto* ev = app.add_subcommand("eval", "zero-shot classification evaluation");
    std::string ev_ckpt, ev_data, ev_out, ev_vocab, ev_rule = "w2", ev_lexicon;
    std::optional<std::uint64_t> ev_seed;
    ev->add_option("--checkpoint", ev_ckpt, "trained checkpoint")->required();
    ev->add_option("--data", ev_data, "evaluation dataset directory")->required();
    ev->add_option("--out", ev_out, "output directory")->required();
    ev->add_option("--vocab", ev_vocab, "vocab file (checkpoint sibling when omitted)");
    ev->add_option("--score-rule", ev_rule, "w2 | kl");
    ev->add_option("--lexicon", ev_lexicon, "lexicon json (builtin when omitted)");
    ev->add_option("--seed", ev_seed, "recorded in the manifest");

    app.add_subcommand("selftest", "run the numeric oracle suites");

    CLI11_PARSE(app, argc, argv);

    try {
        if (rg->parsed()) {
            return cmd_reportgen(rg_disease, rg_findings, rg_backend, rg_out, rg_lexicon,
                                 rg_verbose);
        }
        if (dg->parsed()) return cmd_datagen(dg_spec, dg_out, dg_lexicon, dg_seed);
        if (pt->parsed()) return cmd_pretrain(pt_config, pt_data, pt_out, pt_seed, pt_resume);
        if (ev->parsed()) {
            return cmd_eval(ev_ckpt, ev_data, ev_out, ev_vocab, ev_rule, ev_lexicon, ev_seed);
        }
        return cmd_selftest();
    } catch (const numerical_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const parse_error& e) {
        std::cerr << "error in section '" << e.section() << "': " << e.what() << "\n";
        return kExitUserError;
    } catch (const std::runtime_error& e) {
        // degenerate input, lexicon miss, io, config mismatch
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    } catch (const contract_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUserError;
    } catch (const std::exception& e) {
        std::cerr << "unexpected error: " << e.what() << "\n";
        return 1;
    }
}
