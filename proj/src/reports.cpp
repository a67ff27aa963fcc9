#include "dmlm/reports.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

#include "dmlm/errors.hpp"
#include "dmlm/llm_client.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

namespace {

constexpr const char* kDefinitionHeader = "Definition:";
constexpr const char* kAppearanceHeader = "Radiographic characteristics:";
constexpr const char* kObservationsHeader = "Observations:";
constexpr const char* kVerdictsHeader = "Verdicts:";
constexpr const char* kDiseaseHeader = "Disease:";
constexpr const char* kObservationPrefix = "Observation:";
constexpr const char* kVerdictPrefix = "Verdict:";

bool has_newline(const std::string& s) { return s.find('\n') != std::string::npos; }

std::string strip(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

std::string ensure_period(const std::string& s) {
    if (s.empty() || s.back() == '.') return s;
    return s + ".";
}

}  // namespace

void validate_report(const StructuredReport& r) {
    if (r.disease.empty()) throw contract_error("report: empty disease");
    if (r.definition.empty()) throw contract_error("report: empty definition section");
    if (r.appearance.empty()) throw contract_error("report: empty appearance section");
    if (r.observations.empty()) throw contract_error("report: empty observations section");
    if (r.verdicts.empty()) throw contract_error("report: empty verdicts section");
    if (has_newline(r.disease) || has_newline(r.definition) || has_newline(r.appearance)) {
        throw contract_error("report: sections must be single-line");
    }
    for (const auto& o : r.observations) {
        if (o.empty() || has_newline(o)) throw contract_error("report: bad observation line");
    }
    for (const auto& v : r.verdicts) {
        if (v.empty() || has_newline(v)) throw contract_error("report: bad verdict line");
    }
}

std::string PromptTemplate::render(const std::string& disease) const {
    if (disease.empty()) throw contract_error("prompt render: empty disease");
    const std::size_t pos = text.find(placeholder);
    if (pos == std::string::npos || text.find(placeholder, pos + 1) != std::string::npos) {
        throw contract_error("prompt template must contain the placeholder exactly once");
    }
    std::string out = text;
    out.replace(pos, std::string(placeholder).size(), disease);
    return out;
}

const PromptTemplate& definition_prompt_template() {
    static const PromptTemplate t{
        "definition",
        "Define [disease name]. Give me only a single paragraph and short definition of the "
        "disease."};
    return t;
}

const PromptTemplate& appearance_prompt_template() {
    static const PromptTemplate t{
        "appearance",
        "What are the distinguishing radiographic signs of [disease name] compared to other "
        "similar conditions?"};
    return t;
}

std::string render_definition_prompt(const std::string& disease) {
    return definition_prompt_template().render(disease);
}

std::string render_appearance_prompt(const std::string& disease) {
    return appearance_prompt_template().render(disease);
}

Lexicon Lexicon::builtin() {
    Lexicon lex;
    // Toy entries on a shared scaffold: every class-specific direction in
    // the text is concentrated in one signature descriptor, repeated
    // through the appearance section. That keeps the appearance span
    // short and makes its tokens carry the class signal undiluted.
    auto make = [](std::string disease, std::string sig_cap, std::string sig) {
        LexiconEntry e;
        e.disease = disease;
        std::string cap_disease = disease;
        cap_disease[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(cap_disease[0])));
        e.definition =
            cap_disease + " is a " + sig + " pattern of the chest seen on the radiograph.";
        e.appearance = sig_cap + " shading with " + sig + " margins and " + sig +
                       " texture across the involved zone.";
        return e;
    };
    lex.entries_ = {
        make("atelectasis", "Collapsed", "collapsed"),
        make("pneumothorax", "Lucent", "lucent"),
        make("cardiomegaly", "Globular", "globular"),
        make("pleural effusion", "Blunted", "blunted"),
        make("consolidation", "Dense", "dense"),
        make("pulmonary edema", "Hazy", "hazy"),
        make("pneumonia", "Patchy", "patchy"),
        make("fibrosis", "Reticular", "reticular"),
    };
    return lex;
}

Lexicon Lexicon::load(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw io_error("lexicon parse failure in " + path + ": " + e.what());
    }
    Lexicon lex;
    for (const auto& item : j.at("diseases")) {
        lex.entries_.push_back({item.at("disease").get<std::string>(),
                                item.at("definition").get<std::string>(),
                                item.at("appearance").get<std::string>()});
    }
    if (lex.entries_.empty()) throw io_error("lexicon file has no entries: " + path);
    return lex;
}

void Lexicon::save(const std::string& path) const {
    nlohmann::json j;
    j["diseases"] = nlohmann::json::array();
    for (const auto& e : entries_) {
        j["diseases"].push_back(
            {{"disease", e.disease}, {"definition", e.definition}, {"appearance", e.appearance}});
    }
    atomic_write_file(path, j.dump(2) + "\n");
}

const LexiconEntry* Lexicon::find(const std::string& disease) const {
    for (const auto& e : entries_) {
        if (e.disease == disease) return &e;
    }
    return nullptr;
}

const LexiconEntry& Lexicon::at(std::size_t idx) const {
    if (idx >= entries_.size()) throw contract_error("Lexicon::at: index out of range");
    return entries_[idx];
}

namespace {

StructuredReport template_report(const LexiconEntry& entry,
                                 const std::vector<std::string>& findings) {
    StructuredReport r;
    r.disease = entry.disease;
    r.definition = entry.definition;
    r.appearance = entry.appearance;
    if (findings.empty()) {
        r.observations.push_back("Observation: unremarkable study.");
    } else {
        for (const auto& f : findings) {
            r.observations.push_back(std::string(kObservationPrefix) + " " + ensure_period(strip(f)));
        }
    }
    r.verdicts.push_back(std::string(kVerdictPrefix) + " " + entry.disease + " present.");
    return r;
}

// Validates an LLM response against its required prefix; returns the
// content with the prefix stripped and newlines collapsed, or empty on a
// malformed response.
std::string extract_prefixed(const std::string& response, const std::string& prefix) {
    std::string body = strip(response);
    if (body.rfind(prefix, 0) != 0) return "";
    body = strip(body.substr(prefix.size()));
    std::replace(body.begin(), body.end(), '\n', ' ');
    std::replace(body.begin(), body.end(), '\r', ' ');
    return body;
}

}  // namespace

ReportGeneration generate_report(const std::string& disease,
                                 const std::vector<std::string>& findings, ReportBackend backend,
                                 const Lexicon& lexicon, LlmClient* client) {
    if (disease.empty()) throw contract_error("generate_report: empty disease");

    const LexiconEntry* entry = lexicon.find(disease);

    ReportGeneration out;
    if (backend == ReportBackend::template_backend) {
        if (!entry) throw lexicon_miss_error("disease not in lexicon: " + disease);
        out.report = template_report(*entry, findings);
        return out;
    }

    // LLM backend. Any failure path lands on the deterministic template.
    auto fallback = [&](const std::string& why) {
        if (!entry) {
            throw lexicon_miss_error("llm backend failed (" + why +
                                     ") and disease not in lexicon for fallback: " + disease);
        }
        out.report = template_report(*entry, findings);
        out.used_fallback = true;
        out.warnings.push_back("llm backend fell back to template: " + why);
        return out;
    };

    if (!client || !client->configured()) return fallback("no endpoint configured");

    auto ask = [&](const std::string& prompt, const char* prefix) -> std::string {
        for (int attempt = 0; attempt < 2; ++attempt) {
            try {
                // Skip the cache on the retry so a cached malformed
                // response cannot wedge generation.
                const std::string raw = client->complete(prompt, attempt == 0);
                const std::string body = extract_prefixed(raw, prefix);
                if (!body.empty()) {
                    client->cache_store(prompt, raw);
                    return body;
                }
            } catch (const io_error&) {
                // transport failure; retry once
            }
        }
        return "";
    };

    const std::string definition = ask(render_definition_prompt(disease), kDefinitionHeader);
    if (definition.empty()) return fallback("definition response invalid after retry");
    const std::string appearance = ask(render_appearance_prompt(disease), kAppearanceHeader);
    if (appearance.empty()) return fallback("appearance response invalid after retry");

    out.report.disease = disease;
    out.report.definition = definition;
    out.report.appearance = appearance;
    StructuredReport skeleton = template_report(entry ? *entry : LexiconEntry{disease, "x", "x"},
                                                findings);
    out.report.observations = std::move(skeleton.observations);
    out.report.verdicts = std::move(skeleton.verdicts);
    return out;
}

std::string serialize_report(const StructuredReport& r) {
    validate_report(r);
    std::ostringstream out;
    out << kDefinitionHeader << " " << r.definition << "\n";
    out << kAppearanceHeader << " " << r.appearance << "\n";
    out << kObservationsHeader << "\n";
    for (const auto& o : r.observations) out << o << "\n";
    out << kVerdictsHeader << "\n";
    for (const auto& v : r.verdicts) out << v << "\n";
    out << kDiseaseHeader << " " << r.disease << "\n";
    return out.str();
}

namespace {

bool starts_with(const std::string& s, const std::string& prefix) {
    return s.rfind(prefix, 0) == 0;
}

// A section header appearing anywhere it does not belong means the fixed
// order was violated or a section was duplicated.
void reject_stray_header(const std::string& line, const char* current_section) {
    static const std::pair<const char*, const char*> headers[] = {
        {kDefinitionHeader, "definition"},
        {kAppearanceHeader, "appearance"},
        {kObservationsHeader, "observations"},
        {kVerdictsHeader, "verdicts"},
    };
    for (const auto& [header, section] : headers) {
        if (starts_with(line, header)) {
            throw parse_error(section, std::string("section '") + section +
                                           "' out of order or duplicated inside " +
                                           current_section);
        }
    }
}

}  // namespace

StructuredReport parse_report(const std::string& s) {
    std::vector<std::string> lines;
    {
        std::istringstream in(s);
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (!strip(line).empty()) lines.push_back(line);
        }
    }
    std::size_t i = 0;
    auto need_line = [&](const char* section) -> const std::string& {
        if (i >= lines.size()) throw parse_error(section, std::string("missing section: ") + section);
        return lines[i];
    };

    StructuredReport r;

    {
        const std::string& line = need_line("definition");
        if (!starts_with(line, kDefinitionHeader)) {
            throw parse_error("definition", "expected 'Definition:' as first section");
        }
        r.definition = strip(line.substr(std::string(kDefinitionHeader).size()));
        if (r.definition.empty()) throw parse_error("definition", "empty definition section");
        ++i;
    }
    {
        const std::string& line = need_line("appearance");
        if (!starts_with(line, kAppearanceHeader)) {
            throw parse_error("appearance", "expected 'Radiographic characteristics:' second");
        }
        r.appearance = strip(line.substr(std::string(kAppearanceHeader).size()));
        if (r.appearance.empty()) throw parse_error("appearance", "empty appearance section");
        ++i;
    }
    {
        const std::string& line = need_line("observations");
        if (strip(line) != kObservationsHeader) {
            throw parse_error("observations", "expected 'Observations:' third");
        }
        ++i;
        while (i < lines.size() && starts_with(lines[i], kObservationPrefix)) {
            r.observations.push_back(lines[i]);
            ++i;
        }
        if (r.observations.empty()) throw parse_error("observations", "no observation lines");
    }
    {
        const std::string& line = need_line("verdicts");
        if (strip(line) != kVerdictsHeader) {
            reject_stray_header(line, "observations");
            throw parse_error("verdicts", "expected 'Verdicts:' fourth");
        }
        ++i;
        while (i < lines.size() && starts_with(lines[i], kVerdictPrefix)) {
            r.verdicts.push_back(lines[i]);
            ++i;
        }
        if (r.verdicts.empty()) throw parse_error("verdicts", "no verdict lines");
    }
    {
        const std::string& line = need_line("disease");
        if (!starts_with(line, kDiseaseHeader)) {
            reject_stray_header(line, "verdicts");
            throw parse_error("disease", "expected trailing 'Disease:' line");
        }
        r.disease = strip(line.substr(std::string(kDiseaseHeader).size()));
        if (r.disease.empty()) throw parse_error("disease", "empty disease label");
        ++i;
    }
    if (i != lines.size()) {
        reject_stray_header(lines[i], "disease");
        throw parse_error("disease", "unexpected trailing content");
    }
    validate_report(r);
    return r;
}

namespace {

std::vector<int> ids_of(const std::vector<std::string>& tokens, const Vocab& vocab) {
    std::vector<int> out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(vocab.id_of(t));
    return out;
}

TextInput assemble(const std::vector<int>& def_ids, const std::vector<int>& app_ids,
                   std::vector<int> obs_ids, std::vector<int> verd_ids, std::size_t max_len) {
    const std::size_t fixed = 2 + def_ids.size() + app_ids.size();
    if (fixed > max_len) {
        throw contract_error("tokenize_report: definition and appearance alone exceed max_len");
    }
    std::size_t budget = max_len - fixed;
    if (obs_ids.size() > budget) obs_ids.resize(budget);
    budget -= obs_ids.size();
    if (verd_ids.size() > budget) verd_ids.resize(budget);

    TextInput t;
    t.token_ids.push_back(SpecialTokens::begin);
    auto append = [&t](const std::vector<int>& ids) {
        const std::size_t b = t.token_ids.size();
        t.token_ids.insert(t.token_ids.end(), ids.begin(), ids.end());
        return SectionRange{b, t.token_ids.size()};
    };
    t.spans.definition = append(def_ids);
    t.spans.appearance = append(app_ids);
    t.spans.observations = append(obs_ids);
    t.spans.verdicts = append(verd_ids);
    t.token_ids.push_back(SpecialTokens::end);

    t.special.assign(t.token_ids.size(), false);
    t.special.front() = true;
    t.special.back() = true;
    return t;
}

}  // namespace

TextInput tokenize_report(const StructuredReport& r, const Vocab& vocab, std::size_t max_len) {
    validate_report(r);
    const auto def_ids = ids_of(Vocab::tokenize_text(r.definition), vocab);
    const auto app_ids = ids_of(Vocab::tokenize_text(r.appearance), vocab);
    std::vector<std::string> obs_tokens, verd_tokens;
    for (const auto& o : r.observations) {
        for (auto& tok : Vocab::tokenize_text(o)) obs_tokens.push_back(tok);
    }
    for (const auto& v : r.verdicts) {
        for (auto& tok : Vocab::tokenize_text(v)) verd_tokens.push_back(tok);
    }
    if (def_ids.empty() || app_ids.empty()) {
        throw contract_error("tokenize_report: definition/appearance tokenize to nothing");
    }
    return assemble(def_ids, app_ids, ids_of(obs_tokens, vocab), ids_of(verd_tokens, vocab),
                    max_len);
}

TextInput tokenize_findings_only(const std::vector<std::string>& observations, const Vocab& vocab,
                                 std::size_t max_len) {
    std::vector<std::string> tokens;
    for (const auto& o : observations) {
        for (auto& tok : Vocab::tokenize_text(o)) tokens.push_back(tok);
    }
    if (tokens.empty()) throw contract_error("tokenize_findings_only: nothing to tokenize");
    std::vector<int> ids = ids_of(tokens, vocab);
    if (ids.size() > max_len - 2) ids.resize(max_len - 2);

    TextInput t;
    t.token_ids.push_back(SpecialTokens::begin);
    t.token_ids.insert(t.token_ids.end(), ids.begin(), ids.end());
    const std::size_t body_end = t.token_ids.size();
    t.token_ids.push_back(SpecialTokens::end);
    // Only the observations span is populated; appearance_saliency falls
    // back to uniform saliency for such inputs.
    t.spans.definition = {1, 1};
    t.spans.appearance = {1, 1};
    t.spans.observations = {1, body_end};
    t.spans.verdicts = {body_end, body_end};
    t.special.assign(t.token_ids.size(), false);
    t.special.front() = true;
    t.special.back() = true;
    return t;
}

}  // namespace dmlm
