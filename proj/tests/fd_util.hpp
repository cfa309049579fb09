#pragma once

#include <cmath>
#include <functional>

#include "voxseg/rng.hpp"
#include "voxseg/tensor.hpp"

// Shared finite-difference scaffolding for the kernel-level backward checks.
// The scalar probe loss is sum(r * out) for a fixed random r, so d loss/d out
// is r. The probe is linear in each perturbed scalar, which kills the
// truncation term of the central difference; the probe sum accumulates in
// double so the noise floor is the kernel's own arithmetic.

namespace fd {

template <typename T>
voxseg::TensorT<T> random_tensor(std::vector<int64_t> shape, voxseg::Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
    voxseg::TensorT<T> t(std::move(shape));
    for (auto& v : t.data) v = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double probe_loss(const voxseg::TensorT<T>& out, const voxseg::TensorT<T>& r) {
    double acc = 0;
    for (size_t i = 0; i < out.data.size(); ++i)
        acc += static_cast<double>(out.data[i]) * static_cast<double>(r.data[i]);
    return acc;
}

// Max relative error between an analytic gradient and central differences of
// `loss` w.r.t. every element of `x`. Elements far below the gradient scale
// are held to an absolute bar of scale_frac * max|analytic| * tolerance via
// the shared denominator floor.
template <typename T>
double max_rel_err(voxseg::TensorT<T>& x, const voxseg::TensorT<T>& analytic,
                   const std::function<double()>& loss, double h, double scale_frac = 0.05) {
    double gscale = 0;
    for (const T& v : analytic.data) gscale = std::max(gscale, std::fabs(static_cast<double>(v)));
    const double floor = std::max(1e-12, scale_frac * gscale);
    double worst = 0;
    for (size_t i = 0; i < x.data.size(); ++i) {
        const T orig = x.data[i];
        x.data[i] = static_cast<T>(orig + h);
        const double lp = loss();
        x.data[i] = static_cast<T>(orig - h);
        const double lm = loss();
        x.data[i] = orig;
        const double fd = (lp - lm) / (2 * h);
        const double an = static_cast<double>(analytic.data[i]);
        worst = std::max(worst, std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), floor}));
    }
    return worst;
}

}  // namespace fd
