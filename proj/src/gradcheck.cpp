// SPDX-License-Identifier: Apache-2.0
#include "dmt/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>
#include <vector>

namespace dmt {

void zero_grads(ParamSet& params) {
    for (auto& [name, t] : params) t->grad.assign(t->data.size(), 0.0);
}

FiniteDiffReport finite_diff_check(const std::function<TensorPtr(const ParamSet&)>& f,
                                   ParamSet& params, double h,
                                   std::int64_t max_coords_per_param, std::uint64_t sample_seed) {
    if (h <= 0.0) throw ValueError("finite_diff_check: h must be positive");

    zero_grads(params);
    TensorPtr loss = f(params);
    backward(loss);
    const double f0 = loss->item();

    std::map<std::string, std::vector<double>> analytic;
    for (auto& [name, t] : params) {
        analytic[name] = t->grad.empty() ? std::vector<double>(t->data.size(), 0.0) : t->grad;
    }

    FiniteDiffReport report;
    NoGradGuard no_grad;
    std::uint64_t salt = 0;
    for (auto& [name, t] : params) {
        const std::int64_t n = t->numel();
        std::vector<std::int64_t> coords;
        if (max_coords_per_param > 0 && n > max_coords_per_param) {
            Rng rng(Rng::splitmix(sample_seed ^ (0x5851f42d4c957f2dULL + ++salt)));
            std::unordered_set<std::int64_t> picked;
            while (static_cast<std::int64_t>(picked.size()) < max_coords_per_param) {
                picked.insert(rng.uniform_int(0, n - 1));
            }
            coords.assign(picked.begin(), picked.end());
            std::sort(coords.begin(), coords.end());
        } else {
            coords.resize(static_cast<std::size_t>(n));
            for (std::int64_t i = 0; i < n; ++i) coords[static_cast<std::size_t>(i)] = i;
        }

        for (std::int64_t i : coords) {
            const double orig = t->data[static_cast<std::size_t>(i)];
            t->data[static_cast<std::size_t>(i)] = orig + h;
            const double fp = f(params)->item();
            t->data[static_cast<std::size_t>(i)] = orig - h;
            const double fm = f(params)->item();
            t->data[static_cast<std::size_t>(i)] = orig;

            const double left = (f0 - fm) / h;
            const double right = (fp - f0) / h;
            const double slope_scale = std::max({1.0, std::fabs(left), std::fabs(right)});
            if (std::fabs(left - right) > 0.05 * slope_scale) {
                ++report.skipped_kinks;
                continue;
            }

            const double fd = (fp - fm) / (2.0 * h);
            const double an = analytic[name][static_cast<std::size_t>(i)];
            const double rel = std::fabs(fd - an) / std::max({1.0, std::fabs(fd), std::fabs(an)});
            ++report.checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = an;
                report.worst_numeric = fd;
            }
        }
    }
    return report;
}

} // namespace dmt
