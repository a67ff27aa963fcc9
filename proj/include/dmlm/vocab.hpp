#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace dmlm {

/// Token table with four reserved ids (pad 0, oov 1, begin 2, end 3).
/// Regular tokens ordered by descending corpus frequency, ties broken
/// lexicographically, so rebuilding on the same corpus is bit-stable.
class Vocab {
  public:
    Vocab();

    static Vocab build(const std::vector<std::string>& corpus_texts);

    /// Lowercased alphanumeric runs; punctuation as single-char tokens.
    static std::vector<std::string> tokenize_text(std::string_view text);

    int id_of(const std::string& token) const;
    const std::string& token(int id) const;
    std::size_t size() const { return id_to_token_.size(); }
    std::uint64_t hash() const;

    void save(const std::string& path) const;
    static Vocab load(const std::string& path);

  private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, int> token_to_id_;
};

}  // namespace dmlm
