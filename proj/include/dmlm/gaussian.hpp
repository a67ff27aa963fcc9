#pragma once

#include <Eigen/Dense>
#include <cstddef>

namespace dmlm {

/// Clamp bounds for log-variance. Keeps every variance strictly positive
/// and finite; exp(±10) spans nine orders of magnitude, far wider than
/// anything training produces.
constexpr double kLogVarMin = -10.0;
constexpr double kLogVarMax = 10.0;

/// Diagonal Gaussian N(mu, diag(exp(log_var))). Construction clamps
/// log_var into [kLogVarMin, kLogVarMax] and rejects non-finite entries.
struct DiagGaussian {
    Eigen::VectorXd mu;
    Eigen::VectorXd log_var;

    DiagGaussian() = default;
    DiagGaussian(Eigen::VectorXd mu_in, Eigen::VectorXd log_var_in);

    /// 1-D convenience: N(mean, variance).
    static DiagGaussian scalar(double mean, double variance);

    std::size_t dim() const { return static_cast<std::size_t>(mu.size()); }
    Eigen::VectorXd sigma() const { return (0.5 * log_var.array()).exp(); }
    Eigen::VectorXd variance() const { return log_var.array().exp(); }

    bool operator==(const DiagGaussian& o) const { return mu == o.mu && log_var == o.log_var; }
};

/// One Gaussian per sequence position (token or patch), all sharing the
/// same dimension. Stored as L x d matrices.
struct GaussianSequence {
    Eigen::MatrixXd mu;       // L x d
    Eigen::MatrixXd log_var;  // L x d

    GaussianSequence() = default;
    GaussianSequence(Eigen::MatrixXd mu_in, Eigen::MatrixXd log_var_in);

    std::size_t length() const { return static_cast<std::size_t>(mu.rows()); }
    std::size_t dim() const { return static_cast<std::size_t>(mu.cols()); }
    DiagGaussian item(std::size_t i) const;

    /// Rows [begin, end) as a new sequence. end > begin required.
    GaussianSequence slice(std::size_t begin, std::size_t end) const;
};

/// KL(p || q) for diagonal Gaussians, evaluated in log-variance space:
///   1/2 sum_k [ lq - lp + (exp(lp) + (mu_p - mu_q)^2) * exp(-lq) - 1 ].
double kl_diag(const DiagGaussian& p, const DiagGaussian& q);

/// 2-Wasserstein distance between diagonal Gaussians:
///   sqrt( sum_k (mu_p - mu_q)^2 + (sigma_p - sigma_q)^2 ).
double w2_diag(const DiagGaussian& p, const DiagGaussian& q);

struct PairGrad {
    Eigen::VectorXd d_mu_p, d_log_var_p, d_mu_q, d_log_var_q;
};

/// Analytic gradients of kl_diag with respect to all four inputs.
PairGrad kl_diag_grad(const DiagGaussian& p, const DiagGaussian& q);

/// Analytic gradients of w2_diag. Undefined (returned as zeros) at the
/// non-smooth point p == q.
PairGrad w2_diag_grad(const DiagGaussian& p, const DiagGaussian& q);

/// Reparameterized draw mu + sigma (.*) noise.
Eigen::VectorXd sample(const DiagGaussian& p, const Eigen::VectorXd& noise);

/// Moment-matched pooling of a sequence into one Gaussian:
///   mu = mean_i mu_i,  var = mean_i (sigma_i^2 + mu_i^2) - mu^2,
/// variance floored at exp(kLogVarMin).
DiagGaussian pool_sequence(const GaussianSequence& s);

}  // namespace dmlm
