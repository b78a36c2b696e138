// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <map>
#include <string>

#include "dmt/tensor.hpp"

namespace dmt {

/// Named parameter collection. Iteration order is the sorted name order,
/// which fixes checkpoint layout and optimizer update order.
using ParamSet = std::map<std::string, TensorPtr>;

void zero_grads(ParamSet& params);

struct FiniteDiffReport {
    double max_rel_err = 0.0;
    std::int64_t checked = 0;
    std::int64_t skipped_kinks = 0;
    std::string worst_param;
    std::int64_t worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

// Central-difference check of backward() against (f(x+h)-f(x-h))/2h per
// coordinate. Relative error is normalized by max(1, |fd|, |analytic|).
// Coordinates where the one-sided slopes (f0-fm)/h and (fp-f0)/h disagree by
// more than 5% of their scale sit on a kink (e.g. relu at exactly 0) and are
// excluded from the max. `max_coords_per_param` == 0 checks every coordinate;
// otherwise a seeded sample per tensor keeps large models tractable.
FiniteDiffReport finite_diff_check(const std::function<TensorPtr(const ParamSet&)>& f,
                                   ParamSet& params, double h = 1e-5,
                                   std::int64_t max_coords_per_param = 0,
                                   std::uint64_t sample_seed = 0);

} // namespace dmt
