// SPDX-License-Identifier: Apache-2.0
#pragma once

// Property checks shared by the `verify` subcommand and the acceptance
// binary. Each returns a pass flag plus a one-line summary.

#include <cstdint>
#include <string>
#include <vector>

namespace sdrl {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct CheckOptions {
    std::uint64_t seed = 20250101;
    double scale = 1.0; // multiplies trial / case counts (tests use < 1)
};

CheckResult check_convex_hull(const CheckOptions& opt = {});
CheckResult check_saturation_bound(const CheckOptions& opt = {});
CheckResult check_scale_decomposition(const CheckOptions& opt = {});
CheckResult check_grpo_unbounded(const CheckOptions& opt = {});
CheckResult check_exceedance_identity(const CheckOptions& opt = {});
CheckResult check_staircase(const CheckOptions& opt = {});
CheckResult check_elbo_gradients(const CheckOptions& opt = {});
CheckResult check_softmax_stability(const CheckOptions& opt = {});
CheckResult check_dominance(const CheckOptions& opt = {});
CheckResult check_spike_bound(const CheckOptions& opt = {});
CheckResult check_drift_monotonicity(const CheckOptions& opt = {});

std::vector<std::string> check_names();
/// Throws ConfigError for an unknown name.
CheckResult run_check(const std::string& name, const CheckOptions& opt = {});

} // namespace sdrl
