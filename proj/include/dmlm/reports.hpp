#pragma once

#include <string>
#include <vector>

#include "dmlm/types.hpp"
#include "dmlm/vocab.hpp"

namespace dmlm {

class LlmClient;

/// Four-section clinical report plus its disease label. Fields hold the
/// section content without the serialized headers.
struct StructuredReport {
    std::string disease;
    std::string definition;
    std::string appearance;
    std::vector<std::string> observations;  // each "Observation: ..."
    std::vector<std::string> verdicts;      // each "Verdict: ..."

    bool operator==(const StructuredReport&) const = default;
};

/// Throws contract_error unless every section is non-empty and free of
/// newlines (the serialized form is line-oriented).
void validate_report(const StructuredReport& r);

struct PromptTemplate {
    std::string name;
    std::string text;  // contains the placeholder exactly once

    static constexpr const char* placeholder = "[disease name]";
    std::string render(const std::string& disease) const;
};

/// The two generation prompts, exposed for golden-string tests.
const PromptTemplate& definition_prompt_template();
const PromptTemplate& appearance_prompt_template();

std::string render_definition_prompt(const std::string& disease);
std::string render_appearance_prompt(const std::string& disease);

struct LexiconEntry {
    std::string disease;
    std::string definition;
    std::string appearance;
};

/// Per-disease definition/appearance entries backing the offline template
/// backend. Entry order defines stable class ids.
class Lexicon {
  public:
    static Lexicon builtin();
    static Lexicon load(const std::string& path);
    void save(const std::string& path) const;

    const LexiconEntry* find(const std::string& disease) const;
    const LexiconEntry& at(std::size_t idx) const;
    std::size_t size() const { return entries_.size(); }

  private:
    std::vector<LexiconEntry> entries_;
};

enum class ReportBackend { template_backend, llm };

struct ReportGeneration {
    StructuredReport report;
    bool used_fallback = false;
    std::vector<std::string> warnings;
};

/// Builds a report. The template backend is fully deterministic; the llm
/// backend sends the two prompts, validates the required response
/// prefixes, retries once, and falls back to the template backend with a
/// recorded warning on any failure.
ReportGeneration generate_report(const std::string& disease,
                                 const std::vector<std::string>& findings, ReportBackend backend,
                                 const Lexicon& lexicon, LlmClient* client = nullptr);

/// Line-oriented serialized form:
///   Definition: ...
///   Radiographic characteristics: ...
///   Observations:          (items, one per line)
///   Verdicts:              (items, one per line)
///   Disease: ...
std::string serialize_report(const StructuredReport& r);

/// Strict inverse of serialize_report; enforces section order and throws
/// parse_error naming the offending section.
StructuredReport parse_report(const std::string& s);

/// Tokenizes the four sections into [begin] D A O V [end] with recorded
/// spans. Observations/verdicts are truncated from the end if the budget
/// is exceeded; definition and appearance never are.
TextInput tokenize_report(const StructuredReport& r, const Vocab& vocab, std::size_t max_len);

/// Raw-findings variant: observation lines only, empty spans for the
/// other three sections.
TextInput tokenize_findings_only(const std::vector<std::string>& observations, const Vocab& vocab,
                                 std::size_t max_len);

}  // namespace dmlm
