#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include "dmlm/errors.hpp"
#include "dmlm/llm_client.hpp"
#include "dmlm/reports.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/vocab.hpp"

#include <httplib.h>
#include <json.hpp>

using namespace dmlm;

TEST_CASE("prompt golden strings") {
    CHECK(render_definition_prompt("atelectasis") ==
          "Define atelectasis. Give me only a single paragraph and short definition of the "
          "disease.");
    CHECK(render_appearance_prompt("atelectasis") ==
          "What are the distinguishing radiographic signs of atelectasis compared to other "
          "similar conditions?");

    // Plain substitution, no escaping, unicode preserved byte-exact.
    CHECK(render_definition_prompt("a]b") ==
          "Define a]b. Give me only a single paragraph and short definition of the disease.");
    const std::string unicode = "pneumothorax\xc3\xa9";
    CHECK(render_appearance_prompt(unicode).find(unicode) != std::string::npos);

    CHECK_THROWS_AS(render_definition_prompt(""), contract_error);
    CHECK_THROWS_AS(render_appearance_prompt(""), contract_error);
}

TEST_CASE("template backend generates well-formed reports") {
    const Lexicon lex = Lexicon::builtin();
    const auto gen = generate_report("atelectasis", {"left lower lobe opacity"},
                                     ReportBackend::template_backend, lex);
    CHECK_FALSE(gen.used_fallback);
    const std::string s = serialize_report(gen.report);
    CHECK(s.rfind("Definition:", 0) == 0);
    CHECK(s.find("\nRadiographic characteristics:") != std::string::npos);
    CHECK(gen.report.observations.size() == 1);
    CHECK(gen.report.observations[0] == "Observation: left lower lobe opacity.");
    CHECK(gen.report.verdicts[0] == "Verdict: atelectasis present.");

    CHECK_THROWS_AS(generate_report("dragon pox", {}, ReportBackend::template_backend, lex),
                    lexicon_miss_error);
}

TEST_CASE("serialize/parse round trip and section order enforcement") {
    const Lexicon lex = Lexicon::builtin();
    Rng rng(1);

    for (int trial = 0; trial < 1000; ++trial) {
        const auto& entry = lex.at(rng.uniform_below(lex.size()));
        std::vector<std::string> findings;
        const std::size_t n = 1 + rng.uniform_below(3);
        for (std::size_t i = 0; i < n; ++i) {
            findings.push_back("finding number " + std::to_string(rng.uniform_below(50)));
        }
        const auto gen =
            generate_report(entry.disease, findings, ReportBackend::template_backend, lex);
        const auto back = parse_report(serialize_report(gen.report));
        CHECK(back == gen.report);
    }
}

TEST_CASE("parse errors name the offending section") {
    const Lexicon lex = Lexicon::builtin();
    const auto gen = generate_report("pneumothorax", {"apical lucency"},
                                     ReportBackend::template_backend, lex);
    const std::string good = serialize_report(gen.report);

    // Missing verdicts.
    {
        std::string s = good;
        const auto pos = s.find("Verdicts:");
        s.erase(pos, std::string("Verdicts:\n").size());
        try {
            parse_report(s);
            FAIL("expected parse_error");
        } catch (const parse_error& e) {
            CHECK(e.section() == "verdicts");
        }
    }

    // Only the identity order of the four sections parses.
    const std::string def_line = "Definition: d.";
    const std::string app_line = "Radiographic characteristics: a.";
    const std::string obs_block = "Observations:\nObservation: o.";
    const std::string verd_block = "Verdicts:\nVerdict: v.";
    const std::string disease_line = "Disease: pneumothorax";
    std::vector<std::string> blocks = {def_line, app_line, obs_block, verd_block};
    std::vector<std::size_t> perm = {0, 1, 2, 3};
    int parsed_ok = 0, rejected = 0;
    do {
        std::string s;
        for (std::size_t p : perm) s += blocks[p] + "\n";
        s += disease_line + "\n";
        try {
            parse_report(s);
            ++parsed_ok;
        } catch (const parse_error&) {
            ++rejected;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(parsed_ok == 1);
    CHECK(rejected == 23);
}

TEST_CASE("tokenize_report spans tile the sequence") {
    const Lexicon lex = Lexicon::builtin();
    std::vector<std::string> corpus;
    for (std::size_t i = 0; i < lex.size(); ++i) {
        const auto& e = lex.at(i);
        corpus.push_back(e.definition + "\n" + e.appearance);
    }
    corpus.push_back("observation upper lower left right opacity verdict present unremarkable "
                     "study finding number");
    for (int i = 0; i < 50; ++i) corpus.push_back("finding number " + std::to_string(i));
    const Vocab vocab = Vocab::build(corpus);

    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto& entry = lex.at(rng.uniform_below(lex.size()));
        std::vector<std::string> findings;
        const std::size_t n = 1 + rng.uniform_below(4);
        for (std::size_t i = 0; i < n; ++i) {
            findings.push_back("finding number " + std::to_string(rng.uniform_below(50)));
        }
        const auto gen =
            generate_report(entry.disease, findings, ReportBackend::template_backend, lex);
        const TextInput t = tokenize_report(gen.report, vocab, 128);
        t.validate(vocab.size());

        // Tiling: specials at 0 and L-1, spans cover everything between.
        CHECK(t.special.front());
        CHECK(t.special.back());
        CHECK(t.spans.definition.begin == 1);
        CHECK(t.spans.definition.end == t.spans.appearance.begin);
        CHECK(t.spans.appearance.end == t.spans.observations.begin);
        CHECK(t.spans.observations.end == t.spans.verdicts.begin);
        CHECK(t.spans.verdicts.end == t.length() - 1);
        CHECK_FALSE(t.spans.appearance.empty());
    }
}

TEST_CASE("tokenize_report truncation and oov behavior") {
    const Lexicon lex = Lexicon::builtin();
    const auto& e = lex.at(0);
    const Vocab vocab = Vocab::build({e.definition, e.appearance, "observation verdict present"});

    std::vector<std::string> many;
    for (int i = 0; i < 60; ++i) many.push_back("assorted finding " + std::to_string(i));
    const auto gen = generate_report(e.disease, many, ReportBackend::template_backend, lex);

    // Observations/verdicts shrink to fit; definition and appearance are intact.
    const TextInput t = tokenize_report(gen.report, vocab, 64);
    CHECK(t.length() == 64);
    const TextInput full = tokenize_report(gen.report, vocab, 4096);
    CHECK(t.spans.definition.size() == full.spans.definition.size());
    CHECK(t.spans.appearance.size() == full.spans.appearance.size());
    CHECK(t.spans.observations.size() < full.spans.observations.size());

    // If even definition + appearance cannot fit, that is a hard error.
    CHECK_THROWS_AS(tokenize_report(gen.report, vocab, 8), contract_error);

    // Known-word report has no OOV ids.
    const auto gen2 = generate_report(e.disease, {}, ReportBackend::template_backend, lex);
    const TextInput t2 = tokenize_report(gen2.report, vocab, 128);
    int oov = 0;
    for (std::size_t i = t2.spans.definition.begin; i < t2.spans.appearance.end; ++i) {
        if (t2.token_ids[i] == SpecialTokens::oov) ++oov;
    }
    CHECK(oov == 0);

    // Empty-section report is rejected.
    StructuredReport broken = gen2.report;
    broken.appearance = "";
    CHECK_THROWS_AS(tokenize_report(broken, vocab, 128), contract_error);
}

TEST_CASE("findings-only tokenization leaves appearance span empty") {
    const Vocab vocab = Vocab::build({"upper left opacity observation"});
    const TextInput t = tokenize_findings_only({"Observation: upper left opacity."}, vocab, 32);
    t.validate(vocab.size());
    CHECK(t.spans.appearance.empty());
    CHECK(t.spans.definition.empty());
    CHECK_FALSE(t.spans.observations.empty());
    CHECK(t.special.front());
    CHECK(t.special.back());
}

namespace {

struct FlakyServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};

    // mode: "garbage" returns a response missing the required prefix,
    // "http500" fails outright, "good" answers properly.
    explicit FlakyServer(const std::string& mode) {
        server.Post("/v1/chat/completions",
                    [this, mode](const httplib::Request& req, httplib::Response& res) {
                        ++hits;
                        const auto body = nlohmann::json::parse(req.body);
                        const std::string prompt = body["messages"][0]["content"];
                        if (mode == "http500") {
                            res.status = 500;
                            return;
                        }
                        std::string content;
                        if (mode == "garbage") {
                            content = "I cannot help with that.";
                        } else if (prompt.rfind("Define", 0) == 0) {
                            content = "Definition: a synthetic definition from the endpoint.";
                        } else {
                            content = "Radiographic characteristics: synthetic appearance text.";
                        }
                        nlohmann::json reply = {
                            {"choices",
                             {{{"message", {{"role", "assistant"}, {"content", content}}}}}}};
                        res.set_content(reply.dump(), "application/json");
                    });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this]() { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FlakyServer() {
        server.stop();
        thread.join();
    }
    LlmConfig config() const {
        LlmConfig cfg;
        cfg.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
        cfg.model = "test-model";
        cfg.timeout_seconds = 5;
        return cfg;
    }
};

}  // namespace

TEST_CASE("llm backend: healthy endpoint is used") {
    FlakyServer srv("good");
    LlmClient client(srv.config());
    const Lexicon lex = Lexicon::builtin();
    const auto gen =
        generate_report("atelectasis", {"opacity"}, ReportBackend::llm, lex, &client);
    CHECK_FALSE(gen.used_fallback);
    CHECK(gen.report.definition == "a synthetic definition from the endpoint.");
    CHECK(gen.report.appearance == "synthetic appearance text.");
    CHECK(gen.report.verdicts[0] == "Verdict: atelectasis present.");
}

TEST_CASE("llm backend: missing prefix retries once then falls back") {
    FlakyServer srv("garbage");
    LlmClient client(srv.config());
    const Lexicon lex = Lexicon::builtin();
    const auto gen = generate_report("atelectasis", {"opacity"}, ReportBackend::llm, lex, &client);
    CHECK(gen.used_fallback);
    CHECK(gen.warnings.size() == 1);
    CHECK(srv.hits == 2);  // one retry
    // Fallback equals the template output.
    const auto tpl =
        generate_report("atelectasis", {"opacity"}, ReportBackend::template_backend, lex);
    CHECK(gen.report == tpl.report);
}

TEST_CASE("llm backend: transport failure falls back") {
    FlakyServer srv("http500");
    LlmClient client(srv.config());
    const Lexicon lex = Lexicon::builtin();
    const auto gen = generate_report("pneumonia", {}, ReportBackend::llm, lex, &client);
    CHECK(gen.used_fallback);
    CHECK_FALSE(gen.warnings.empty());
}

TEST_CASE("llm backend: unconfigured client falls back immediately") {
    LlmClient client(LlmConfig{});
    const Lexicon lex = Lexicon::builtin();
    const auto gen = generate_report("fibrosis", {}, ReportBackend::llm, lex, &client);
    CHECK(gen.used_fallback);
    CHECK(gen.warnings.size() == 1);
}

TEST_CASE("llm response cache round trip") {
    const std::string cache_dir = "llm_cache_test_dir";
    std::filesystem::remove_all(cache_dir);
    LlmConfig cfg;
    cfg.cache_dir = cache_dir;
    LlmClient client(cfg);
    CHECK_FALSE(client.cache_lookup("some prompt").has_value());
    client.cache_store("some prompt", "some response");
    auto hit = client.cache_lookup("some prompt");
    REQUIRE(hit.has_value());
    CHECK(*hit == "some response");
}

TEST_CASE("vocab construction rules") {
    const Vocab v = Vocab::build({"a a b"});
    CHECK(v.id_of("a") == SpecialTokens::first_regular);
    CHECK(v.id_of("b") == SpecialTokens::first_regular + 1);

    const Vocab tie = Vocab::build({"b a"});
    CHECK(tie.id_of("a") == SpecialTokens::first_regular);  // lexicographic tiebreak
    CHECK(tie.id_of("b") == SpecialTokens::first_regular + 1);

    const Vocab again = Vocab::build({"b a"});
    CHECK(again.hash() == tie.hash());
    CHECK(v.id_of("zzz") == SpecialTokens::oov);

    v.save("vocab_test.txt");
    const Vocab loaded = Vocab::load("vocab_test.txt");
    CHECK(loaded.hash() == v.hash());
    CHECK(loaded.size() == v.size());
}
