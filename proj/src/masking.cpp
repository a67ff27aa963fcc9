#include "dmlm/masking.hpp"

#include <algorithm>
#include <cmath>

#include "dmlm/errors.hpp"
#include "dmlm/rng.hpp"

namespace dmlm {

MaskPlan MaskPlan::merged_with(const MaskPlan& other) const {
    MaskPlan out = *this;
    if (out.text_indices.empty()) out.text_indices = other.text_indices;
    if (out.image_indices.empty()) {
        out.image_indices = other.image_indices;
        out.image_ratio_used = other.image_ratio_used;
    }
    return out;
}

std::size_t mask_count(double ratio, std::size_t n_maskable) {
    if (n_maskable == 0) return 0;
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_maskable) + 0.5));
    return std::max<std::size_t>(1, std::min(k, n_maskable));
}

MaskPlan plan_text_mask(const TextInput& t, double ratio, std::uint64_t rng_seed) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw contract_error("plan_text_mask: ratio in (0,1] required");
    const std::vector<std::size_t> maskable = t.maskable_positions();
    if (maskable.empty()) throw degenerate_input_error("plan_text_mask: no maskable tokens");

    const std::size_t k = mask_count(ratio, maskable.size());
    Rng rng(rng_seed);
    std::vector<std::size_t> chosen = rng.sample_without_replacement(maskable.size(), k);

    MaskPlan plan;
    plan.text_indices.reserve(k);
    for (std::size_t c : chosen) plan.text_indices.push_back(maskable[c]);
    std::sort(plan.text_indices.begin(), plan.text_indices.end());
    return plan;
}

SaliencyResult appearance_saliency(const GaussianSequence& image_seq,
                                   const GaussianSequence& text_seq,
                                   const SectionRange& appearance_span) {
    SaliencyResult out;
    out.values.assign(image_seq.length(), 0.0);
    if (appearance_span.empty()) {
        out.uniform_fallback = true;
        return out;
    }
    if (appearance_span.end > text_seq.length()) {
        throw contract_error("appearance_saliency: span exceeds text length");
    }
    if (image_seq.dim() != text_seq.dim()) {
        throw contract_error("appearance_saliency: dimension mismatch");
    }

    const auto p0 = static_cast<Eigen::Index>(appearance_span.begin);
    const auto p1 = static_cast<Eigen::Index>(appearance_span.end);
    for (std::size_t p = 0; p < image_seq.length(); ++p) {
        const auto pi = static_cast<Eigen::Index>(p);
        const double norm_p = image_seq.mu.row(pi).norm();
        double best = -1.0;
        for (Eigen::Index ti = p0; ti < p1; ++ti) {
            const double norm_t = text_seq.mu.row(ti).norm();
            double cosine = 0.0;
            if (norm_p > 0.0 && norm_t > 0.0) {
                cosine = image_seq.mu.row(pi).dot(text_seq.mu.row(ti)) / (norm_p * norm_t);
            }
            best = std::max(best, cosine);
        }
        out.values[p] = best;
    }
    return out;
}

MaskPlan plan_image_mask(const std::vector<double>& saliency, double base_ratio,
                         std::uint64_t rng_seed, double tau) {
    const std::size_t n_patches = saliency.size();
    if (n_patches == 0) throw contract_error("plan_image_mask: P = 0");
    if (!(base_ratio > 0.0 && base_ratio < 1.0)) {
        throw contract_error("plan_image_mask: base_ratio in (0,1) required");
    }
    if (!(tau > 0.0)) throw contract_error("plan_image_mask: tau must be positive");

    // Adaptive ratio from the strongest quartile of saliency.
    std::vector<double> sorted = saliency;
    std::sort(sorted.begin(), sorted.end(), std::greater<double>());
    const std::size_t quart = (n_patches + 3) / 4;
    double top_mean = 0.0;
    for (std::size_t i = 0; i < quart; ++i) top_mean += sorted[i];
    top_mean /= static_cast<double>(quart);
    const double ratio = std::clamp(base_ratio * (1.0 + top_mean), 0.1, 0.6);

    const auto k =
        static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n_patches) + 0.5));

    MaskPlan plan;
    plan.image_ratio_used = ratio;
    if (k == 0) return plan;

    // Gumbel top-k == sampling without replacement with probability
    // proportional to softmax(saliency / tau). Noise is drawn first so a
    // higher saliency can only raise an index's key.
    Rng rng(rng_seed);
    std::vector<std::pair<double, std::size_t>> keys(n_patches);
    for (std::size_t i = 0; i < n_patches; ++i) {
        keys[i] = {saliency[i] / tau + rng.gumbel(), i};
    }
    std::sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    plan.image_indices.reserve(k);
    for (std::size_t i = 0; i < std::min(k, n_patches); ++i) {
        plan.image_indices.push_back(keys[i].second);
    }
    std::sort(plan.image_indices.begin(), plan.image_indices.end());
    return plan;
}

}  // namespace dmlm
