#pragma once

#include <iosfwd>
#include <string>
#include <vector>

namespace cnsnet {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Invariant battery: gradient checks, the region-statistics identities,
// SOAN stat transfer, neutral-mask attention equivalence, metric and
// soft-mask oracles. Prints one line per check when `out` is given.
std::vector<CheckResult> run_selftest(std::ostream* out = nullptr);

bool all_passed(const std::vector<CheckResult>& results);

}  // namespace cnsnet
