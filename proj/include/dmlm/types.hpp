#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <string>
#include <vector>

namespace dmlm {

/// Half-open token range [begin, end).
struct SectionRange {
    std::size_t begin = 0;
    std::size_t end = 0;
    std::size_t size() const { return end - begin; }
    bool empty() const { return begin == end; }
};

/// Token spans of the four report sections, in fixed order
/// definition < appearance < observations < verdicts.
struct SectionSpans {
    SectionRange definition;
    SectionRange appearance;
    SectionRange observations;
    SectionRange verdicts;
};

/// Reserved token ids.
struct SpecialTokens {
    static constexpr int pad = 0;
    static constexpr int oov = 1;
    static constexpr int begin = 2;
    static constexpr int end = 3;
    static constexpr int first_regular = 4;
};

/// Tokenized report ready for the text encoder.
struct TextInput {
    std::vector<int> token_ids;
    SectionSpans spans;
    std::vector<bool> special;  // true at begin/end sentinels

    std::size_t length() const { return token_ids.size(); }
    std::vector<std::size_t> maskable_positions() const;

    /// Checks span ordering/disjointness/tiling and id range.
    void validate(std::size_t vocab_size) const;
};

/// Patch grid for the image encoder; values normalized to [0,1].
struct ImageInput {
    Eigen::MatrixXd patches;  // P x patch_dim
    std::size_t grid_h = 0;
    std::size_t grid_w = 0;

    std::size_t n_patches() const { return static_cast<std::size_t>(patches.rows()); }
    void validate() const;
};

}  // namespace dmlm
