#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "deeppyram/tensor.hpp"

namespace deeppyram {

// Central-difference gradient oracle. The function under test runs twice:
// once in float32 to produce analytic gradients via the autodiff graph, and
// once per probe in float64 to produce numeric derivatives. Coordinates where
// the finite difference is not self-consistent across step sizes (kinks of
// relu/hardtanh/max sitting inside the probe interval) are retried with a
// smaller step and skipped if still inconsistent; the skip fraction is
// reported so callers can bound it.

struct GradCheckOptions {
    double step = 1e-2;
    double denom_floor = 1e-2;      // relative error denominator floor
    double consistency_tol = 1e-3;  // fd(h) vs fd(h/2) agreement
    double suspect_rel = 1e-3;      // rel error that triggers the kink probe
    double kink_tol = 2e-3;         // one-sided fwd/bwd slope disagreement
    int64_t max_coords_per_input = 0; // 0 = check every coordinate
    double skip_limit = 0.05;       // max tolerated skipped fraction
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    int64_t coords_checked = 0;
    int64_t coords_skipped = 0;
    std::string worst_site;

    double skipped_fraction() const {
        const int64_t total = coords_checked + coords_skipped;
        return total == 0 ? 0.0 : static_cast<double>(coords_skipped) / static_cast<double>(total);
    }
    bool pass(double tol, double skip_limit = 0.05) const {
        return coords_checked > 0 && max_rel_err < tol && skipped_fraction() <= skip_limit;
    }
};

namespace detail {

// fd at a given half-width; mutates and restores the coordinate in place.
template <typename F>
double central_diff(F&& fn, std::vector<Tensor<double>>& xs, size_t input, int64_t coord, double h) {
    double* slot = xs[input].data() + coord;
    const double orig = *slot;
    *slot = orig + h;
    const double lp = fn(xs).item();
    *slot = orig - h;
    const double lm = fn(xs).item();
    *slot = orig;
    return (lp - lm) / (2.0 * h);
}

} // namespace detail

// `fn` must be callable on std::vector<Tensor<S>> for S in {float, double},
// returning a scalar tensor. `check[i]` selects which inputs are probed;
// unchecked inputs participate in the forward only.
template <typename F>
GradCheckReport numeric_grad_check_multi(F&& fn, const std::vector<Tensor<double>>& inputs,
                                         std::vector<bool> check, GradCheckOptions opt = {}) {
    if (check.empty()) check.assign(inputs.size(), true);
    if (check.size() != inputs.size())
        throw UsageError("numeric_grad_check: check mask length mismatch");

    // float32 analytic pass
    std::vector<Tensor<float>> in32;
    in32.reserve(inputs.size());
    for (size_t i = 0; i < inputs.size(); ++i)
        in32.push_back(cast_values<float>(inputs[i], check[i]));
    Tensor<float> loss32 = fn(in32);
    if (loss32.numel() != 1) throw UsageError("numeric_grad_check: fn must return a scalar");
    loss32.backward();

    std::vector<Tensor<double>> in64 = inputs; // shared handles; coords mutated in place
    GradCheckReport rep;
    const double h = opt.step;

    for (size_t i = 0; i < inputs.size(); ++i) {
        if (!check[i]) continue;
        const int64_t n = inputs[i].numel();
        int64_t stride = 1;
        if (opt.max_coords_per_input > 0 && n > opt.max_coords_per_input)
            stride = (n + opt.max_coords_per_input - 1) / opt.max_coords_per_input;
        const std::vector<float>& g32 = in32[i].grad();
        for (int64_t j = 0; j < n; j += stride) {
            double fd1 = detail::central_diff(fn, in64, i, j, h);
            double fd2 = detail::central_diff(fn, in64, i, j, h / 2.0);
            double numeric;
            double accepted_h; // half-width of the window behind `numeric`
            const double scale1 = std::max({std::fabs(fd1), std::fabs(fd2), opt.denom_floor});
            if (std::fabs(fd1 - fd2) <= opt.consistency_tol * scale1) {
                numeric = fd2;
                accepted_h = h / 2.0;
            } else {
                // probe interval likely straddles a kink: shrink and re-validate
                const double hs = h / 16.0;
                const double fd3 = detail::central_diff(fn, in64, i, j, hs);
                const double fd4 = detail::central_diff(fn, in64, i, j, hs / 2.0);
                const double scale2 = std::max({std::fabs(fd3), std::fabs(fd4), opt.denom_floor});
                if (std::fabs(fd3 - fd4) > opt.consistency_tol * scale2) {
                    ++rep.coords_skipped;
                    continue;
                }
                numeric = fd4;
                accepted_h = hs / 2.0;
            }
            const double analytic = static_cast<double>(g32[static_cast<size_t>(j)]);
            const double abs_err = std::fabs(analytic - numeric);
            const double rel = abs_err / std::max({std::fabs(analytic), std::fabs(numeric), opt.denom_floor});
            if (rel > opt.suspect_rel) {
                // A kink near the evaluation point can fool central
                // differences at every consistent step (a kink AT the point
                // returns the mean of the one-sided slopes). Probe
                // forward/backward at the accepted window's half-width: any
                // kink inside that window shows a fwd/bwd disagreement of
                // exactly twice the fd error it caused, so kink_tol =
                // 2 * (error tolerance) separates subgradient points from
                // genuine analytic-gradient bugs.
                const double hs = accepted_h;
                double* slot = in64[i].data() + j;
                const double orig = *slot;
                const double f0 = fn(in64).item();
                *slot = orig + hs;
                const double fp = fn(in64).item();
                *slot = orig - hs;
                const double fm = fn(in64).item();
                *slot = orig;
                const double fwd = (fp - f0) / hs;
                const double bwd = (f0 - fm) / hs;
                if (std::fabs(fwd - bwd) >
                    opt.kink_tol * std::max({std::fabs(fwd), std::fabs(bwd), opt.denom_floor})) {
                    ++rep.coords_skipped;
                    continue;
                }
            }
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_site = "input " + std::to_string(i) + " coord " + std::to_string(j) +
                                 " analytic " + std::to_string(analytic) + " numeric " +
                                 std::to_string(numeric);
            }
            rep.max_abs_err = std::max(rep.max_abs_err, abs_err);
        }
    }
    return rep;
}

// Single-input convenience form: max relative error of d fn / d x.
template <typename F>
double numeric_grad_check(F&& fn, const Tensor<double>& x, double step = 1e-2) {
    GradCheckOptions opt;
    opt.step = step;
    auto wrapped = [&fn](const auto& xs) { return fn(xs[0]); };
    return numeric_grad_check_multi(wrapped, {x}, {true}, opt).max_rel_err;
}

} // namespace deeppyram
