#include "dmlm/oracles.hpp"

#include <cmath>

#include "dmlm/errors.hpp"
#include "dmlm/rng.hpp"
#include "dmlm/stats.hpp"

namespace dmlm {

McEstimate mc_kl_oracle(const DiagGaussian& p, const DiagGaussian& q, std::size_t n_samples,
                        std::uint64_t seed) {
    if (p.dim() != q.dim() || p.dim() == 0) throw contract_error("mc_kl_oracle: dimension mismatch");
    if (n_samples < 10000) throw contract_error("mc_kl_oracle: n_samples >= 1e4 required");

    const Eigen::Index d = static_cast<Eigen::Index>(p.dim());
    Eigen::VectorXd sig_p(d), inv_vp(d), inv_vq(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        sig_p[k] = std::exp(0.5 * p.log_var[k]);
        inv_vp[k] = std::exp(-p.log_var[k]);
        inv_vq[k] = std::exp(-q.log_var[k]);
    }

    Rng rng(seed);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n_samples; ++i) {
        double ll_diff = 0.0;
        for (Eigen::Index k = 0; k < d; ++k) {
            const double z = rng.normal();
            const double x = p.mu[k] + sig_p[k] * z;
            const double rp = x - p.mu[k];
            const double rq = x - q.mu[k];
            // log p(x) - log q(x); the ln(2*pi) terms cancel.
            ll_diff += 0.5 * (q.log_var[k] - p.log_var[k] + rq * rq * inv_vq[k] -
                              rp * rp * inv_vp[k]);
        }
        sum += ll_diff;
        sum_sq += ll_diff * ll_diff;
    }

    McEstimate est;
    est.n = n_samples;
    const double n = static_cast<double>(n_samples);
    est.value = sum / n;
    const double var = std::max(0.0, (sum_sq - sum * sum / n) / (n - 1.0));
    est.std_error = std::sqrt(var / n);
    return est;
}

double quantile_w2_oracle(const DiagGaussian& p, const DiagGaussian& q, std::size_t n_grid) {
    if (p.dim() != 1 || q.dim() != 1) throw contract_error("quantile_w2_oracle: 1-D only");
    if (n_grid < 1000) throw contract_error("quantile_w2_oracle: n_grid too small");

    const double mp = p.mu[0], sp = std::exp(0.5 * p.log_var[0]);
    const double mq = q.mu[0], sq = std::exp(0.5 * q.log_var[0]);
    const double n = static_cast<double>(n_grid);
    double acc = 0.0;
    for (std::size_t i = 0; i < n_grid; ++i) {
        const double u = (static_cast<double>(i) + 0.5) / n;
        const double z = normal_quantile(u);
        const double diff = (mp + sp * z) - (mq + sq * z);
        acc += diff * diff;
    }
    return std::sqrt(acc / n);
}

}  // namespace dmlm
