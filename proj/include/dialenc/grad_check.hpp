#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "dialenc/rng.hpp"
#include "dialenc/tensor.hpp"

namespace dialenc {

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::string worst_param;
    Dim worst_index = -1;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
    size_t coords_checked = 0;
};

// Central-difference gradient check. `loss_fn` must rebuild the scalar loss
// from the current parameter values on every call (forward-only when no tape
// is live). Analytic gradients come from one taped backward pass; each
// selected coordinate is then perturbed by +/-eps. Relative error uses a
// floored denominator: for gradients well above the floor it is the ordinary
// relative error, while coordinates whose true gradient sits at the
// finite-difference noise level are held to an absolute bound of
// floor * tolerance instead of dividing one roundoff residue by another.
inline constexpr double kGradCheckDenomFloor = 1e-4;
template <typename S>
GradCheckReport grad_check(std::vector<std::pair<std::string, Tensor<S>>>& params,
                           const std::function<Tensor<S>()>& loss_fn, double eps,
                           size_t max_coords_per_param = 0, uint64_t seed = 1) {
    for (auto& [name, p] : params) p.zero_grad();
    {
        GradTape<S> tape;
        Tensor<S> loss = loss_fn();
        tape.backward(loss);
    }

    GradCheckReport report;
    Rng pick(seed);
    for (auto& [name, p] : params) {
        const Dim n = p.numel();
        std::vector<Dim> coords;
        if (max_coords_per_param == 0 || static_cast<size_t>(n) <= max_coords_per_param) {
            coords.resize(static_cast<size_t>(n));
            for (Dim i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            // Partial Fisher-Yates: the first max_coords entries of a shuffle.
            std::vector<Dim> all(static_cast<size_t>(n));
            for (Dim i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
            for (size_t i = 0; i < max_coords_per_param; ++i) {
                size_t j = i + static_cast<size_t>(pick.uniform_int(static_cast<int>(all.size() - i)));
                std::swap(all[i], all[j]);
            }
            coords.assign(all.begin(), all.begin() + static_cast<long>(max_coords_per_param));
        }

        for (Dim i : coords) {
            const S saved = p.value()[i];
            p.value()[i] = saved + static_cast<S>(eps);
            double f_plus = static_cast<double>(loss_fn().item());
            p.value()[i] = saved - static_cast<S>(eps);
            double f_minus = static_cast<double>(loss_fn().item());
            p.value()[i] = saved;

            double numeric = (f_plus - f_minus) / (2.0 * eps);
            double analytic = p.has_grad() ? static_cast<double>(p.grad()[i]) : 0.0;
            double abs_err = std::abs(numeric - analytic);
            double rel =
                abs_err / std::max(kGradCheckDenomFloor, std::abs(numeric) + std::abs(analytic));
            ++report.coords_checked;
            if (rel > report.max_rel_err) {
                report.max_rel_err = rel;
                report.max_abs_err = abs_err;
                report.worst_param = name;
                report.worst_index = i;
                report.worst_analytic = analytic;
                report.worst_numeric = numeric;
            }
        }
    }
    return report;
}

}  // namespace dialenc
