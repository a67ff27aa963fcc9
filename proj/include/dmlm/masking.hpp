#pragma once

#include <cstdint>
#include <vector>

#include "dmlm/gaussian.hpp"
#include "dmlm/types.hpp"

namespace dmlm {

/// The index sets chosen for one sample: which text tokens and image
/// patches get hidden from the student pass.
struct MaskPlan {
    std::vector<std::size_t> text_indices;   // sorted, never special positions
    std::vector<std::size_t> image_indices;  // sorted, subset of [0, P)
    double image_ratio_used = 0.0;

    MaskPlan merged_with(const MaskPlan& other) const;
};

/// Round-half-up mask count with a floor of one whenever masking is
/// requested and any candidate exists.
std::size_t mask_count(double ratio, std::size_t n_maskable);

/// Uniformly samples round(ratio * n_maskable) non-special positions
/// without replacement. Deterministic given seed.
MaskPlan plan_text_mask(const TextInput& t, double ratio, std::uint64_t rng_seed);

struct SaliencyResult {
    std::vector<double> values;  // one per patch, in [-1, 1]
    bool uniform_fallback = false;
};

/// Per-patch relevance of the report's appearance section:
///   saliency_p = max over appearance tokens t of cosine(mu_p, mu_t).
/// An empty appearance span falls back to all-zero saliency.
SaliencyResult appearance_saliency(const GaussianSequence& image_seq,
                                   const GaussianSequence& text_seq,
                                   const SectionRange& appearance_span);

/// Adaptive image masking. Effective ratio
///   r = clip(base_ratio * (1 + mean(top-quartile saliency)), 0.1, 0.6),
/// then round(r * P) patches sampled without replacement with probability
/// proportional to softmax(saliency / tau). Deterministic given seed.
MaskPlan plan_image_mask(const std::vector<double>& saliency, double base_ratio,
                         std::uint64_t rng_seed, double tau = 0.1);

}  // namespace dmlm
