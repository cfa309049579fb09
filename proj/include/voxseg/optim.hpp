#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/graph.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

template <typename T>
struct AdamStateT {
    std::vector<TensorT<T>> m;  // first moments, shaped like the parameters
    std::vector<TensorT<T>> v;  // second moments
    int64_t step = 0;
    AdamConfig cfg;

    static AdamStateT zeros_like(const ParamStore<T>& params, AdamConfig cfg = {}) {
        AdamStateT s;
        s.cfg = cfg;
        for (const auto& t : params.tensors) {
            s.m.emplace_back(t.shape);
            s.v.emplace_back(t.shape);
        }
        return s;
    }
};

using AdamState = AdamStateT<float>;

// Standard bias-corrected Adam update, in place. A non-finite gradient
// rejects the whole step and reports the offending parameter.
template <typename T>
void adam_step(ParamStore<T>& params, const std::vector<TensorT<T>>& grads, AdamStateT<T>& state,
               double lr) {
    if (grads.size() != params.tensors.size())
        throw std::invalid_argument("adam_step: gradient count mismatch");
    for (size_t p = 0; p < grads.size(); ++p) {
        if (!grads[p].same_shape(params.tensors[p]))
            throw std::invalid_argument("adam_step: gradient shape mismatch for " + params.names[p]);
        if (!grads[p].all_finite())
            throw std::runtime_error("adam_step: non-finite gradient for parameter " +
                                     params.names[p] + "; step rejected");
    }

    state.step += 1;
    const double b1 = state.cfg.beta1, b2 = state.cfg.beta2;
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
    for (size_t p = 0; p < grads.size(); ++p) {
        T* w = params.tensors[p].data.data();
        T* m = state.m[p].data.data();
        T* v = state.v[p].data.data();
        const T* g = grads[p].data.data();
        const size_t n = grads[p].data.size();
        for (size_t i = 0; i < n; ++i) {
            m[i] = static_cast<T>(b1 * m[i] + (1.0 - b1) * g[i]);
            v[i] = static_cast<T>(b2 * v[i] + (1.0 - b2) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            w[i] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.cfg.eps));
        }
    }
}

// Plateau decay: halve the rate after `patience` epochs without validation
// improvement, never below floor_lr.
struct LrSchedule {
    double current_lr = 0.005;
    double initial_lr = 0.005;
    double decay_factor = 0.5;
    int patience = 10;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_improvement = 0;
    double floor_lr = 1e-5;
};

inline void lr_update(LrSchedule& s, double epoch_val_loss) {
    if (epoch_val_loss < s.best_val_loss) {
        s.best_val_loss = epoch_val_loss;
        s.epochs_since_improvement = 0;
        return;
    }
    s.epochs_since_improvement += 1;
    if (s.epochs_since_improvement >= s.patience) {
        s.current_lr = std::max(s.current_lr * s.decay_factor, s.floor_lr);
        s.epochs_since_improvement = 0;
    }
}

}  // namespace voxseg
