#include "dmlm/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <sstream>

#include "dmlm/errors.hpp"
#include "dmlm/types.hpp"
#include "dmlm/util.hpp"

namespace dmlm {

namespace {
const char* kReserved[] = {"<pad>", "<oov>", "<s>", "</s>"};
}

Vocab::Vocab() {
    for (const char* r : kReserved) {
        token_to_id_.emplace(r, static_cast<int>(id_to_token_.size()));
        id_to_token_.emplace_back(r);
    }
}

std::vector<std::string> Vocab::tokenize_text(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : text) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c)) {
            cur.push_back(static_cast<char>(std::tolower(c)));
        } else {
            if (!cur.empty()) {
                out.push_back(cur);
                cur.clear();
            }
            if (!std::isspace(c)) out.push_back(std::string(1, ch));
        }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
}

Vocab Vocab::build(const std::vector<std::string>& corpus_texts) {
    if (corpus_texts.empty()) throw contract_error("Vocab::build: empty corpus");
    std::map<std::string, std::size_t> freq;  // ordered map: deterministic ties
    for (const auto& text : corpus_texts) {
        for (auto& tok : tokenize_text(text)) ++freq[tok];
    }
    std::vector<std::pair<std::string, std::size_t>> items(freq.begin(), freq.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
        return a.second > b.second;  // stable sort keeps lexicographic order on ties
    });
    Vocab v;
    for (auto& [tok, count] : items) {
        v.token_to_id_.emplace(tok, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(tok);
    }
    return v;
}

int Vocab::id_of(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? SpecialTokens::oov : it->second;
}

const std::string& Vocab::token(int id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw contract_error("Vocab::token: id out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& tok : id_to_token_) {
        h = fnv1a64(tok, h);
        h = fnv1a64("\n", h);
    }
    return h;
}

void Vocab::save(const std::string& path) const {
    std::ostringstream out;
    for (std::size_t i = SpecialTokens::first_regular; i < id_to_token_.size(); ++i) {
        out << id_to_token_[i] << "\n";
    }
    atomic_write_file(path, out.str());
}

Vocab Vocab::load(const std::string& path) {
    const std::string body = read_file(path);
    Vocab v;
    std::istringstream in(body);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (v.token_to_id_.count(line)) throw io_error("Vocab::load: duplicate token " + line);
        v.token_to_id_.emplace(line, static_cast<int>(v.id_to_token_.size()));
        v.id_to_token_.push_back(line);
    }
    return v;
}

}  // namespace dmlm
