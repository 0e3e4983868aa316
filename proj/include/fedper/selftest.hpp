// Built-in invariant suites, runnable from the CLI and the acceptance tests:
// simplex closure, gradient/finite-difference agreement, EM monotonicity,
// assignment and grid argmin properties, skewness minimum, mixture affinity,
// and byte-level determinism of seeded runs.

#pragma once

#include <string>
#include <vector>

namespace fedper {

struct SuiteResult {
    std::string name;
    bool pass = false;
};

std::vector<SuiteResult> run_invariant_suites();

}  // namespace fedper
