#pragma once

// Central finite-difference gradient verification.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>

#include "ratgan/autograd.hpp"

namespace ratgan {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;  // coordinates whose +/- probes straddle a kink
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;

    bool passed(double tol, double max_skip_fraction = 0.05) const {
        const double total = static_cast<double>(checked + skipped);
        return checked > 0 && max_rel_error <= tol && static_cast<double>(skipped) <= max_skip_fraction * total;
    }

    void merge(const GradCheckReport& o, std::size_t offset = 0) {
        if (o.max_rel_error > max_rel_error) {
            max_rel_error = o.max_rel_error;
            worst_index = o.worst_index + offset;
            worst_analytic = o.worst_analytic;
            worst_numeric = o.worst_numeric;
        }
        checked += o.checked;
        skipped += o.skipped;
    }

    std::string summary() const {
        return "max_rel_error=" + std::to_string(max_rel_error) + " checked=" + std::to_string(checked) +
               " skipped=" + std::to_string(skipped) + " worst@" + std::to_string(worst_index) + " (analytic " +
               std::to_string(worst_analytic) + ", numeric " + std::to_string(worst_numeric) + ")";
    }
};

/// Relative error |a - n| / max(|a|, |n|, floor).
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Perturbs each entry of `x` by +/- step, re-evaluating `loss()` (which must
/// read x), and compares against `analytic`.  x is restored on return.
template <class Loss>
GradCheckReport finite_difference_check(Loss&& loss, std::span<double> x, std::span<const double> analytic,
                                        double step = 1e-5, double floor = 1e-6) {
    GradCheckReport r;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double orig = x[i];
        double fp, fm;
        std::uint64_t sp, sm;
        {
            KinkMonitor km;
            x[i] = orig + step;
            fp = loss();
            sp = km.signature();
        }
        {
            KinkMonitor km;
            x[i] = orig - step;
            fm = loss();
            sm = km.signature();
        }
        x[i] = orig;
        if (sp != sm) {
            ++r.skipped;
            continue;
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double e = relative_error(analytic[i], numeric, floor);
        ++r.checked;
        if (e > r.max_rel_error || r.checked == 1) {
            if (e >= r.max_rel_error) {
                r.max_rel_error = e;
                r.worst_index = i;
                r.worst_analytic = analytic[i];
                r.worst_numeric = numeric;
            }
        }
    }
    return r;
}

template <class Loss>
GradCheckReport finite_difference_check(Loss&& loss, Tensor<double>& x, const Tensor<double>& analytic,
                                        double step = 1e-5, double floor = 1e-6) {
    x.check_same(analytic, "finite_difference_check");
    return finite_difference_check(std::forward<Loss>(loss), x.values(), analytic.values(), step, floor);
}

}  // namespace ratgan
