#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace sida {

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    int coords = 0;
};

struct GradCheckReport {
    std::vector<GradCheckResult> results;
    double worst = 0.0;
    double eps = 0.0;
    double seconds = 0.0;
    bool fault_injected = false;

    bool pass(double tol) const { return worst <= tol; }
};

// Central finite differences vs tape gradients for every primitive op, every
// loss, and (when include_full_model) the full stage-1/stage-2 objectives
// through a d_model=16 model. Large parameters are checked on a seeded
// sample of coordinates. inject_fault deliberately corrupts one analytic
// gradient (negative control for the verification harness itself).
GradCheckReport run_gradcheck(double eps, std::uint64_t seed, bool inject_fault = false,
                              bool include_full_model = true);

}  // namespace sida
