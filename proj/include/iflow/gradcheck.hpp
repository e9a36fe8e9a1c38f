#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace iflow {

// Central finite-difference verification of every differentiable primitive
// and each loss, plus an end-to-end sweep over a small model's parameters.
// Relative error is |analytic - fd| / max(1, |analytic|, |fd|).

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
    bool pass = false;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double tolerance = 0.0;
    double epsilon = 0.0;

    bool all_pass() const;
    double worst() const;
};

GradCheckReport run_gradient_suite(std::uint64_t seed);

}  // namespace iflow
