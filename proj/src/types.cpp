#include "dmlm/types.hpp"

#include "dmlm/errors.hpp"

namespace dmlm {

std::vector<std::size_t> TextInput::maskable_positions() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < token_ids.size(); ++i) {
        if (!special[i]) out.push_back(i);
    }
    return out;
}

void TextInput::validate(std::size_t vocab_size) const {
    const std::size_t len = token_ids.size();
    if (len == 0) throw contract_error("TextInput: empty sequence");
    if (special.size() != len) throw contract_error("TextInput: special mask length mismatch");
    for (int id : token_ids) {
        if (id < 0 || static_cast<std::size_t>(id) >= vocab_size) {
            throw contract_error("TextInput: token id outside vocabulary");
        }
    }
    const SectionRange* ranges[4] = {&spans.definition, &spans.appearance, &spans.observations,
                                     &spans.verdicts};
    std::size_t prev_end = 0;
    for (const SectionRange* r : ranges) {
        if (r->begin > r->end || r->end > len) throw contract_error("TextInput: span out of range");
        if (r->begin < prev_end) throw contract_error("TextInput: spans out of order or overlapping");
        prev_end = r->end == r->begin ? prev_end : r->end;
    }
}

void ImageInput::validate() const {
    if (n_patches() == 0) throw contract_error("ImageInput: no patches");
    if (n_patches() != grid_h * grid_w) {
        throw contract_error("ImageInput: P must equal grid_h * grid_w");
    }
    if (!patches.allFinite()) throw contract_error("ImageInput: non-finite patch value");
}

}  // namespace dmlm
