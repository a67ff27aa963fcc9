#pragma once

#include <stdexcept>
#include <string>

namespace dmlm {

/// Violated precondition or broken type invariant (caller bug).
struct contract_error : std::invalid_argument {
    explicit contract_error(const std::string& msg) : std::invalid_argument(msg) {}
};

/// Structurally valid input the operation cannot act on (no maskable
/// tokens, empty batch, no matched pairs, ...).
struct degenerate_input_error : std::runtime_error {
    explicit degenerate_input_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed serialized report; names the offending section.
struct parse_error : std::runtime_error {
    parse_error(const std::string& section, const std::string& msg)
        : std::runtime_error(msg), section_(section) {}
    const std::string& section() const { return section_; }

  private:
    std::string section_;
};

/// Disease not present in the configured lexicon.
struct lexicon_miss_error : std::runtime_error {
    explicit lexicon_miss_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// File missing, unreadable, or corrupt.
struct io_error : std::runtime_error {
    explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Checkpoint/config disagreement on resume or eval.
struct config_mismatch_error : std::runtime_error {
    explicit config_mismatch_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite loss or other numerical breakdown; aborts the run.
struct numerical_error : std::runtime_error {
    explicit numerical_error(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace dmlm
