#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dmlm/errors.hpp"
#include "dmlm/gaussian.hpp"
#include "dmlm/oracles.hpp"
#include "dmlm/rng.hpp"

using namespace dmlm;

namespace {

DiagGaussian random_gaussian(Rng& rng, std::size_t d) {
    Eigen::VectorXd mu(static_cast<Eigen::Index>(d)), lv(static_cast<Eigen::Index>(d));
    for (Eigen::Index k = 0; k < mu.size(); ++k) {
        mu[k] = 3.0 * (2.0 * rng.uniform01() - 1.0);
        lv[k] = 1.5 * (2.0 * rng.uniform01() - 1.0);
    }
    return DiagGaussian(mu, lv);
}

}  // namespace

TEST_CASE("oracle self-checks on known closed forms") {
    const auto p01 = DiagGaussian::scalar(0.0, 1.0);
    const auto p11 = DiagGaussian::scalar(1.0, 1.0);
    const auto p31 = DiagGaussian::scalar(3.0, 1.0);
    const auto p04 = DiagGaussian::scalar(0.0, 4.0);

    auto same = mc_kl_oracle(p01, p01, 1000000, 0);
    CHECK(std::fabs(same.value) < 0.005);

    auto shifted = mc_kl_oracle(p11, p01, 1000000, 0);
    CHECK(std::fabs(shifted.value - 0.5) < 0.01);

    CHECK(std::fabs(quantile_w2_oracle(p01, p31, 100000) - 3.0) < 1e-3);
    CHECK(std::fabs(quantile_w2_oracle(p01, p04, 100000) - 1.0) < 1e-3);
}

TEST_CASE("kl_diag closed form matches stated examples") {
    const auto p01 = DiagGaussian::scalar(0.0, 1.0);
    const auto p11 = DiagGaussian::scalar(1.0, 1.0);
    const auto p04 = DiagGaussian::scalar(0.0, 4.0);

    CHECK(kl_diag(p01, p01) == 0.0);
    CHECK(kl_diag(p11, p01) == doctest::Approx(0.5).epsilon(1e-12));
    // 0.5 * (ln(1/4) + 4 - 1)
    CHECK(kl_diag(p04, p01) == doctest::Approx(0.8068528194400547).epsilon(1e-12));

    // Cross-check against the MC oracle at the spec tolerance.
    auto est = mc_kl_oracle(p11, p01, 1000000, 42);
    CHECK(std::fabs(kl_diag(p11, p01) - est.value) < 0.01);
}

TEST_CASE("w2_diag closed form matches stated examples") {
    const auto p01 = DiagGaussian::scalar(0.0, 1.0);
    const auto p31 = DiagGaussian::scalar(3.0, 1.0);
    const auto p04 = DiagGaussian::scalar(0.0, 4.0);

    Rng rng(7);
    const auto any = random_gaussian(rng, 5);
    CHECK(w2_diag(any, any) == 0.0);
    CHECK(w2_diag(p01, p31) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(w2_diag(p01, p04) == doctest::Approx(1.0).epsilon(1e-12));  // sigma 1 vs 2
}

TEST_CASE("kl and w2 agree with oracles on random 1-D pairs") {
    Rng rng(123);
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_gaussian(rng, 1);
        const auto q = random_gaussian(rng, 1);
        const auto est = mc_kl_oracle(p, q, 100000, Rng::mix(99, trial));
        CHECK(std::fabs(kl_diag(p, q) - est.value) <= 3.0 * est.std_error + 1e-12);
        CHECK(std::fabs(w2_diag(p, q) - quantile_w2_oracle(p, q, 100000)) <= 1e-3);
    }
}

TEST_CASE("nonnegativity over random pairs") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t d = 1 + rng.uniform_below(8);
        const auto p = random_gaussian(rng, d);
        const auto q = random_gaussian(rng, d);
        CHECK(kl_diag(p, q) >= 0.0);
        CHECK(w2_diag(p, q) >= 0.0);
    }
}

TEST_CASE("w2 symmetric, kl asymmetric somewhere") {
    Rng rng(11);
    bool found_asymmetric = false;
    for (int trial = 0; trial < 100; ++trial) {
        const auto p = random_gaussian(rng, 3);
        const auto q = random_gaussian(rng, 3);
        CHECK(w2_diag(p, q) == w2_diag(q, p));
        if (std::fabs(kl_diag(p, q) - kl_diag(q, p)) > 0.01) found_asymmetric = true;
    }
    CHECK(found_asymmetric);
}

TEST_CASE("w2 triangle inequality on random triples") {
    Rng rng(13);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto a = random_gaussian(rng, 4);
        const auto b = random_gaussian(rng, 4);
        const auto c = random_gaussian(rng, 4);
        CHECK(w2_diag(a, c) <= w2_diag(a, b) + w2_diag(b, c) + 1e-12);
    }
}

TEST_CASE("additivity across dimensions") {
    Rng rng(17);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 2 + rng.uniform_below(6);
        const auto p = random_gaussian(rng, d);
        const auto q = random_gaussian(rng, d);
        double kl_sum = 0.0, w2_sq_sum = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
            const auto i = static_cast<Eigen::Index>(k);
            DiagGaussian pk(p.mu.segment(i, 1), p.log_var.segment(i, 1));
            DiagGaussian qk(q.mu.segment(i, 1), q.log_var.segment(i, 1));
            kl_sum += kl_diag(pk, qk);
            const double w = w2_diag(pk, qk);
            w2_sq_sum += w * w;
        }
        const double kl_full = kl_diag(p, q);
        const double w2_full = w2_diag(p, q);
        CHECK(std::fabs(kl_full - kl_sum) <= 1e-10 * std::max(1.0, std::fabs(kl_full)));
        CHECK(std::fabs(w2_full * w2_full - w2_sq_sum) <=
              1e-10 * std::max(1.0, w2_full * w2_full));
    }
}

TEST_CASE("analytic gradients match central finite differences") {
    Rng rng(19);
    const double h = 1e-5;
    int checked = 0;
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t d = 1 + rng.uniform_below(4);
        auto p = random_gaussian(rng, d);
        auto q = random_gaussian(rng, d);
        if (w2_diag(p, q) < 0.3) continue;  // keep clear of the non-smooth point
        ++checked;

        const auto kg = kl_diag_grad(p, q);
        const auto wg = w2_diag_grad(p, q);

        auto check = [&](auto eval, Eigen::VectorXd& field, const Eigen::VectorXd& analytic) {
            for (Eigen::Index k = 0; k < field.size(); ++k) {
                const double orig = field[k];
                field[k] = orig + h;
                const double up = eval();
                field[k] = orig - h;
                const double dn = eval();
                field[k] = orig;
                const double fd = (up - dn) / (2.0 * h);
                const double denom = std::max({std::fabs(fd), std::fabs(analytic[k]), 1e-6});
                CHECK(std::fabs(fd - analytic[k]) / denom <= 1e-4);
            }
        };

        auto kl_eval = [&]() { return kl_diag(p, q); };
        check(kl_eval, p.mu, kg.d_mu_p);
        check(kl_eval, p.log_var, kg.d_log_var_p);
        check(kl_eval, q.mu, kg.d_mu_q);
        check(kl_eval, q.log_var, kg.d_log_var_q);

        auto w2_eval = [&]() { return w2_diag(p, q); };
        check(w2_eval, p.mu, wg.d_mu_p);
        check(w2_eval, p.log_var, wg.d_log_var_p);
        check(w2_eval, q.mu, wg.d_mu_q);
        check(w2_eval, q.log_var, wg.d_log_var_q);
    }
    CHECK(checked >= 30);
}

TEST_CASE("sample: reparameterized draw") {
    const auto p = DiagGaussian::scalar(0.0, 1.0);
    Eigen::VectorXd zero = Eigen::VectorXd::Zero(1);
    Eigen::VectorXd two(1);
    two << 2.0;
    CHECK(sample(p, zero)[0] == 0.0);
    CHECK(sample(p, two)[0] == 2.0);

    Rng rng(23);
    const auto p3 = DiagGaussian::scalar(1.0, 1.0);
    double acc = 0.0;
    const int n = 100000;
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd noise(1);
        noise << rng.normal();
        acc += sample(p3, noise)[0];
    }
    CHECK(std::fabs(acc / n - 1.0) < 0.02);

    Eigen::VectorXd bad(2);
    bad << 0.0, 0.0;
    CHECK_THROWS_AS(sample(p, bad), contract_error);
}

TEST_CASE("pool_sequence moment matching") {
    // Single element pools to itself.
    Rng rng(29);
    const auto g = random_gaussian(rng, 3);
    GaussianSequence single(g.mu.transpose(), g.log_var.transpose());
    const auto pooled1 = pool_sequence(single);
    CHECK(pooled1.mu.isApprox(g.mu, 1e-12));
    CHECK(pooled1.log_var.isApprox(g.log_var, 1e-12));

    // Two-component mixture N(-1,1), N(1,1): mu 0, var 2.
    Eigen::MatrixXd mu(2, 1), lv(2, 1);
    mu << -1.0, 1.0;
    lv << 0.0, 0.0;
    const auto pooled2 = pool_sequence(GaussianSequence(mu, lv));
    CHECK(pooled2.mu[0] == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(std::exp(pooled2.log_var[0]) == doctest::Approx(2.0).epsilon(1e-12));

    // Empirical mixture moments over 1e6 draws agree.
    Rng draw(31);
    double s = 0.0, ss = 0.0;
    const int n = 1000000;
    for (int i = 0; i < n; ++i) {
        const double mean_i = draw.uniform01() < 0.5 ? -1.0 : 1.0;
        const double x = mean_i + draw.normal();
        s += x;
        ss += x * x;
    }
    const double emp_mean = s / n;
    const double emp_var = ss / n - emp_mean * emp_mean;
    CHECK(std::fabs(emp_mean - pooled2.mu[0]) < 0.01);
    CHECK(std::fabs(emp_var - std::exp(pooled2.log_var[0])) < 0.01);

    // All elements identical pools to that element.
    Eigen::MatrixXd mu3 = Eigen::MatrixXd::Constant(5, 2, 0.7);
    Eigen::MatrixXd lv3 = Eigen::MatrixXd::Constant(5, 2, -0.3);
    const auto pooled3 = pool_sequence(GaussianSequence(mu3, lv3));
    CHECK(pooled3.mu.isApproxToConstant(0.7, 1e-12));
    CHECK(pooled3.log_var.isApproxToConstant(-0.3, 1e-9));
}

TEST_CASE("contract violations") {
    const auto p1 = DiagGaussian::scalar(0.0, 1.0);
    Eigen::VectorXd mu2(2), lv2(2);
    mu2 << 0.0, 0.0;
    lv2 << 0.0, 0.0;
    const DiagGaussian p2(mu2, lv2);
    CHECK_THROWS_AS(kl_diag(p1, p2), contract_error);
    CHECK_THROWS_AS(w2_diag(p1, p2), contract_error);

    Eigen::VectorXd bad(1), ok(1);
    bad << std::numeric_limits<double>::quiet_NaN();
    ok << 0.0;
    CHECK_THROWS_AS(DiagGaussian(bad, ok), contract_error);

    // Construction clamps log_var into range.
    Eigen::VectorXd big(1);
    big << 1e9;
    const DiagGaussian clamped(ok, big);
    CHECK(clamped.log_var[0] == kLogVarMax);
}

TEST_CASE("oracle preconditions") {
    const auto p = DiagGaussian::scalar(0.0, 1.0);
    CHECK_THROWS_AS(mc_kl_oracle(p, p, 100, 0), contract_error);
    Eigen::VectorXd mu2 = Eigen::VectorXd::Zero(2);
    const DiagGaussian p2(mu2, mu2);
    CHECK_THROWS_AS(quantile_w2_oracle(p2, p2, 100000), contract_error);
}
