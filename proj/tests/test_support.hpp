#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "splitprune/autodiff.hpp"
#include "splitprune/rng.hpp"
#include "splitprune/tensor.hpp"

namespace testing {

using namespace splitprune;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    std::uniform_real_distribution<double> u(lo, hi);
    for (auto& v : t.data()) v = u(rng);
    return t;
}

// Worst relative error between an analytic gradient and central differences
// of a scalar function of one tensor. Denominator floored so tiny gradients
// are judged absolutely.
inline double fd_relative_error(const std::function<double(const Tensor&)>& f, const Tensor& at, const Tensor& analytic,
                                double h = 1e-5, double floor = 1e-3) {
    Tensor probe = at;
    double worst = 0.0;
    for (std::size_t i = 0; i < at.size(); ++i) {
        const double keep = probe[i];
        probe[i] = keep + h;
        const double up = f(probe);
        probe[i] = keep - h;
        const double down = f(probe);
        probe[i] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double denom = std::max({std::fabs(numeric), std::fabs(analytic[i]), floor});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / denom);
    }
    return worst;
}

}  // namespace testing
