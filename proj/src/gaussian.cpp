#include "dmlm/gaussian.hpp"

#include <cmath>

#include "dmlm/errors.hpp"

namespace dmlm {

namespace {

void require_finite(const Eigen::Ref<const Eigen::MatrixXd>& m, const char* what) {
    if (!m.allFinite()) throw contract_error(std::string(what) + ": non-finite entry");
}

void require_same_dim(const DiagGaussian& p, const DiagGaussian& q, const char* op) {
    if (p.dim() == 0 || p.dim() != q.dim()) {
        throw contract_error(std::string(op) + ": dimension mismatch (" +
                             std::to_string(p.dim()) + " vs " + std::to_string(q.dim()) + ")");
    }
}

}  // namespace

DiagGaussian::DiagGaussian(Eigen::VectorXd mu_in, Eigen::VectorXd log_var_in)
    : mu(std::move(mu_in)), log_var(std::move(log_var_in)) {
    if (mu.size() == 0 || mu.size() != log_var.size()) {
        throw contract_error("DiagGaussian: mu and log_var must share length d >= 1");
    }
    require_finite(mu, "DiagGaussian mu");
    require_finite(log_var, "DiagGaussian log_var");
    log_var = log_var.array().max(kLogVarMin).min(kLogVarMax);
}

DiagGaussian DiagGaussian::scalar(double mean, double variance) {
    if (!(variance > 0.0) || !std::isfinite(variance) || !std::isfinite(mean)) {
        throw contract_error("DiagGaussian::scalar: requires finite mean and variance > 0");
    }
    Eigen::VectorXd m(1), lv(1);
    m << mean;
    lv << std::log(variance);
    return DiagGaussian(m, lv);
}

GaussianSequence::GaussianSequence(Eigen::MatrixXd mu_in, Eigen::MatrixXd log_var_in)
    : mu(std::move(mu_in)), log_var(std::move(log_var_in)) {
    if (mu.rows() == 0 || mu.cols() == 0 || mu.rows() != log_var.rows() ||
        mu.cols() != log_var.cols()) {
        throw contract_error("GaussianSequence: L >= 1 and matching L x d shapes required");
    }
    require_finite(mu, "GaussianSequence mu");
    require_finite(log_var, "GaussianSequence log_var");
}

DiagGaussian GaussianSequence::item(std::size_t i) const {
    if (i >= length()) throw contract_error("GaussianSequence::item: index out of range");
    return DiagGaussian(mu.row(static_cast<Eigen::Index>(i)).transpose(),
                        log_var.row(static_cast<Eigen::Index>(i)).transpose());
}

GaussianSequence GaussianSequence::slice(std::size_t begin, std::size_t end) const {
    if (begin >= end || end > length()) {
        throw contract_error("GaussianSequence::slice: bad range");
    }
    const auto b = static_cast<Eigen::Index>(begin);
    const auto n = static_cast<Eigen::Index>(end - begin);
    return GaussianSequence(mu.middleRows(b, n), log_var.middleRows(b, n));
}

double kl_diag(const DiagGaussian& p, const DiagGaussian& q) {
    require_same_dim(p, q, "kl_diag");
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p.mu.size(); ++k) {
        const double lp = p.log_var[k];
        const double lq = q.log_var[k];
        const double dm = p.mu[k] - q.mu[k];
        // exp(lp - lq) keeps the variance ratio in one exponential and
        // makes the k-th term vanish exactly when p == q.
        acc += lq - lp + std::exp(lp - lq) + dm * dm * std::exp(-lq) - 1.0;
    }
    return std::max(0.0, 0.5 * acc);
}

double w2_diag(const DiagGaussian& p, const DiagGaussian& q) {
    require_same_dim(p, q, "w2_diag");
    double acc = 0.0;
    for (Eigen::Index k = 0; k < p.mu.size(); ++k) {
        const double dm = p.mu[k] - q.mu[k];
        const double ds = std::exp(0.5 * p.log_var[k]) - std::exp(0.5 * q.log_var[k]);
        acc += dm * dm + ds * ds;
    }
    return std::sqrt(acc);
}

PairGrad kl_diag_grad(const DiagGaussian& p, const DiagGaussian& q) {
    require_same_dim(p, q, "kl_diag_grad");
    const Eigen::Index d = p.mu.size();
    PairGrad g;
    g.d_mu_p.resize(d);
    g.d_log_var_p.resize(d);
    g.d_mu_q.resize(d);
    g.d_log_var_q.resize(d);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double inv_vq = std::exp(-q.log_var[k]);
        const double vp = std::exp(p.log_var[k]);
        const double dm = p.mu[k] - q.mu[k];
        g.d_mu_p[k] = dm * inv_vq;
        g.d_mu_q[k] = -dm * inv_vq;
        g.d_log_var_p[k] = 0.5 * (vp * inv_vq - 1.0);
        g.d_log_var_q[k] = 0.5 * (1.0 - (vp + dm * dm) * inv_vq);
    }
    return g;
}

PairGrad w2_diag_grad(const DiagGaussian& p, const DiagGaussian& q) {
    require_same_dim(p, q, "w2_diag_grad");
    const Eigen::Index d = p.mu.size();
    PairGrad g;
    g.d_mu_p = Eigen::VectorXd::Zero(d);
    g.d_log_var_p = Eigen::VectorXd::Zero(d);
    g.d_mu_q = Eigen::VectorXd::Zero(d);
    g.d_log_var_q = Eigen::VectorXd::Zero(d);
    const double w = w2_diag(p, q);
    if (w < 1e-300) return g;  // non-smooth point
    for (Eigen::Index k = 0; k < d; ++k) {
        const double dm = p.mu[k] - q.mu[k];
        const double sp = std::exp(0.5 * p.log_var[k]);
        const double sq = std::exp(0.5 * q.log_var[k]);
        const double ds = sp - sq;
        g.d_mu_p[k] = dm / w;
        g.d_mu_q[k] = -dm / w;
        g.d_log_var_p[k] = ds * 0.5 * sp / w;   // d sigma / d log_var = sigma / 2
        g.d_log_var_q[k] = -ds * 0.5 * sq / w;
    }
    return g;
}

Eigen::VectorXd sample(const DiagGaussian& p, const Eigen::VectorXd& noise) {
    if (noise.size() != p.mu.size()) {
        throw contract_error("sample: noise length must equal distribution dimension");
    }
    return p.mu.array() + (0.5 * p.log_var.array()).exp() * noise.array();
}

DiagGaussian pool_sequence(const GaussianSequence& s) {
    if (s.length() == 0) throw contract_error("pool_sequence: empty sequence");
    const double inv_l = 1.0 / static_cast<double>(s.length());
    Eigen::VectorXd mean = s.mu.colwise().mean().transpose();
    Eigen::VectorXd second =
        (s.log_var.array().exp() + s.mu.array().square()).colwise().sum().transpose() * inv_l;
    Eigen::VectorXd var = (second - mean.array().square().matrix())
                              .array()
                              .max(std::exp(kLogVarMin))
                              .matrix();
    return DiagGaussian(std::move(mean), var.array().log().matrix());
}

}  // namespace dmlm
