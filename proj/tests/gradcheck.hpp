#pragma once

// Central finite-difference checking for the hand-written backward passes.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "tta/rng.hpp"

namespace testutil {

struct GradCheck {
    double rel_error = 0.0;
    std::size_t checked = 0;
};

/// Relative L2 error between analytic and numeric gradients over a random
/// subset (up to `per_tensor` entries) of `x`.
inline GradCheck check_entries(std::vector<double>& x, const std::vector<double>& analytic,
                               const std::function<double()>& loss, std::size_t per_tensor, std::uint64_t seed,
                               double h = 1e-6) {
    tta::Rng rng(seed);
    std::vector<std::size_t> idx(x.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    if (idx.size() > per_tensor) {
        for (std::size_t i = 0; i < per_tensor; ++i)
            std::swap(idx[i], idx[i + static_cast<std::size_t>(tta::uniform_int(rng, 0, static_cast<long>(idx.size() - i - 1)))]);
        idx.resize(per_tensor);
    }
    double num = 0.0, den_a = 0.0, den_n = 0.0;
    for (std::size_t i : idx) {
        const double keep = x[i];
        x[i] = keep + h;
        const double lp = loss();
        x[i] = keep - h;
        const double lm = loss();
        x[i] = keep;
        const double fd = (lp - lm) / (2 * h);
        num += (fd - analytic[i]) * (fd - analytic[i]);
        den_a += analytic[i] * analytic[i];
        den_n += fd * fd;
    }
    GradCheck r;
    r.checked = idx.size();
    const double den = std::sqrt(std::max(den_a, den_n));
    r.rel_error = den > 1e-12 ? std::sqrt(num) / den : std::sqrt(num);
    return r;
}

}  // namespace testutil
