#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

namespace dmlm {

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI); }

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/// Inverse standard normal CDF. Acklam's rational approximation followed
/// by one Halley step against erfc; absolute error < 1e-13 on (0,1).
double normal_quantile(double p);

/// Regularized incomplete beta I_x(a,b) by continued fraction.
double incomplete_beta(double a, double b, double x);

/// One-sided survival probability P(T > t) for Student's t with df
/// degrees of freedom.
double student_t_sf(double t, double df);

struct PairedTTest {
    double mean_diff = 0.0;
    double t_stat = 0.0;
    double p_value = 1.0;  // one-sided, H1: mean(a - b) > 0
    std::size_t n = 0;
};

/// Paired one-sided t-test of H1: mean(a) > mean(b).
PairedTTest paired_t_test_greater(const std::vector<double>& a, const std::vector<double>& b);

struct MeanVar {
    double mean = 0.0;
    double var = 0.0;  // unbiased
};

MeanVar mean_var(const std::vector<double>& v);

}  // namespace dmlm
