#pragma once

#include <cstddef>
#include <cstdint>

#include "dmlm/gaussian.hpp"

namespace dmlm {

/// Independent cross-checks for the closed forms in gaussian.hpp. These
/// are deliberately implemented from definitions (sampling, quadrature)
/// and share no code with kl_diag / w2_diag.

struct McEstimate {
    double value = 0.0;
    double std_error = 0.0;
    std::size_t n = 0;
};

/// Unbiased Monte-Carlo estimate of E_p[log p(x) - log q(x)] with x ~ p.
/// n_samples >= 1e4 required.
McEstimate mc_kl_oracle(const DiagGaussian& p, const DiagGaussian& q, std::size_t n_samples,
                        std::uint64_t seed);

/// 1-D only: W2 via the quantile representation
///   W2^2 = integral_0^1 (F_p^{-1}(u) - F_q^{-1}(u))^2 du,
/// midpoint rule on n_grid points.
double quantile_w2_oracle(const DiagGaussian& p, const DiagGaussian& q, std::size_t n_grid);

}  // namespace dmlm
