#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dmlm/gaussian.hpp"

namespace dmlm {

/// The functions under test are injectable so a deliberately corrupted
/// implementation can be fed through the same checks (mutation testing).
struct SelftestHooks {
    std::function<double(const DiagGaussian&, const DiagGaussian&)> kl;
    std::function<double(const DiagGaussian&, const DiagGaussian&)> w2;
    std::function<PairGrad(const DiagGaussian&, const DiagGaussian&)> kl_grad;
    std::function<PairGrad(const DiagGaussian&, const DiagGaussian&)> w2_grad;

    SelftestHooks();
};

struct SelftestEntry {
    std::string name;
    bool passed = false;
    double seconds = 0.0;
    std::string detail;
};

/// Oracle suites: KL vs Monte-Carlo, W2 vs quantile quadrature, analytic
/// vs finite-difference gradients, and an end-to-end total-loss gradient
/// check on a tiny model.
std::vector<SelftestEntry> run_selftest(const SelftestHooks& hooks = SelftestHooks());

/// Prints the pass/fail table; returns true iff everything passed.
bool selftest_report(std::ostream& os, const std::vector<SelftestEntry>& entries);

}  // namespace dmlm
