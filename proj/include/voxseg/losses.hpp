#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "voxseg/ops.hpp"
#include "voxseg/tensor.hpp"

// Tversky index/loss with analytic gradients, binary and multi-class
// cross-entropy, and the self-tuning fusion of the two. Channel 0 is the
// foreground channel throughout. All reductions run in a fixed
// voxel order.

namespace voxseg {

// Per-voxel two-channel class probabilities; channel sums are 1.
template <typename T>
struct SoftmaxFieldT {
    TensorT<T> p;  // (N, C>=2, D, H, W)

    int64_t voxels() const { return p.numel() / p.dim(1); }
};

using SoftmaxField = SoftmaxFieldT<float>;

template <typename T>
SoftmaxFieldT<T> make_softmax_field(TensorT<T> p) {
    if (p.rank() != 5 || p.dim(1) < 2)
        throw std::invalid_argument("softmax field must be NCDHW with C >= 2, got " +
                                    shape_string(p.shape));
    return SoftmaxFieldT<T>{std::move(p)};
}

struct TverskyParams {
    double alpha = 0.7;   // false-positive penalty
    double beta = 0.3;    // false-negative penalty
    double smooth = 1e-6;

    static TverskyParams recall_weighted() { return {0.7, 0.3, 1e-6}; }
    static TverskyParams dice_equivalent() { return {0.5, 0.5, 1e-6}; }

    void validate() const {
        if (alpha < 0 || beta < 0 || smooth <= 0)
            throw std::invalid_argument("TverskyParams: alpha/beta must be >= 0 and smooth > 0");
    }
};

// Convex pair of loss weights; the second is always computed as 1 - first.
struct AdaptiveWeights {
    double w_tversky = 0.5;
    double w_bce = 0.5;
    int64_t epoch = 0;
};

struct LossReport {
    double l_tversky = 0;
    double l_bce = 0;
    double l_total = 0;
    AdaptiveWeights weights;
};

namespace detail {

template <typename T>
void check_loss_shapes(const SoftmaxFieldT<T>& p, const TensorT<T>& g) {
    const int64_t pv = p.voxels();
    const int64_t gv = g.rank() == 5 ? g.numel() / g.dim(1) : g.numel();
    if (g.rank() == 5 && g.dim(1) != 1)
        throw std::invalid_argument("label field must have a single channel, got " +
                                    shape_string(g.shape));
    if (pv != gv)
        throw std::invalid_argument("voxel count mismatch: prediction covers " + std::to_string(pv) +
                                    " voxels, labels cover " + std::to_string(gv));
}

// The three overlap sums of the Tversky denominator: sum p0*g0, p0*g1, p1*g0.
template <typename T>
struct TverskySums {
    T tp = 0, fp = 0, fn = 0;
};

template <typename T>
TverskySums<T> tversky_sums(const SoftmaxFieldT<T>& p, const TensorT<T>& g) {
    check_loss_shapes(p, g);
    const int64_t N = p.p.dim(0), C = p.p.dim(1);
    const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
    TverskySums<T> s;
    for (int64_t n = 0; n < N; ++n) {
        const T* p0 = p.p.data.data() + n * C * S;
        const T* p1 = p0 + S;
        const T* gv = g.data.data() + n * S;
        for (int64_t i = 0; i < S; ++i) {
            const T g0 = gv[i];
            const T g1 = T(1) - g0;
            s.tp += p0[i] * g0;
            s.fp += p0[i] * g1;
            s.fn += p1[i] * g0;
        }
    }
    return s;
}

}  // namespace detail

// Tversky index T = (TP + s) / (TP + alpha*FP + beta*FN + s), in (0, 1].
template <typename T>
T tversky_index(const SoftmaxFieldT<T>& p, const TensorT<T>& g, const TverskyParams& params) {
    params.validate();
    const auto s = detail::tversky_sums(p, g);
    const T sm = static_cast<T>(params.smooth);
    const T num = s.tp + sm;
    const T den = s.tp + static_cast<T>(params.alpha) * s.fp + static_cast<T>(params.beta) * s.fn + sm;
    return num / den;
}

template <typename T>
T tversky_loss(const SoftmaxFieldT<T>& p, const TensorT<T>& g, const TverskyParams& params) {
    return T(1) - tversky_index(p, g, params);
}

// Analytic gradient of the *index* with respect to (p0, p1), treating the two
// channels as independent variables. The loss gradient is the negation.
// Returned field has the same NCDHW shape as p (channels beyond 1 get zero).
template <typename T>
TensorT<T> tversky_grad(const SoftmaxFieldT<T>& p, const TensorT<T>& g, const TverskyParams& params) {
    params.validate();
    const auto s = detail::tversky_sums(p, g);
    const T sm = static_cast<T>(params.smooth);
    const T alpha = static_cast<T>(params.alpha), beta = static_cast<T>(params.beta);
    const T num = s.tp + sm;
    const T den = s.tp + alpha * s.fp + beta * s.fn + sm;
    const T inv_den2 = T(1) / (den * den);

    const int64_t N = p.p.dim(0), C = p.p.dim(1);
    const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
    TensorT<T> grad(p.p.shape);
    for (int64_t n = 0; n < N; ++n) {
        const T* gv = g.data.data() + n * S;
        T* d0 = grad.data.data() + n * C * S;
        T* d1 = d0 + S;
        for (int64_t i = 0; i < S; ++i) {
            const T g0 = gv[i];
            const T g1 = T(1) - g0;
            // dT/dp0 = [g0*den - (g0 + alpha*g1)*num] / den^2
            d0[i] = (g0 * den - (g0 + alpha * g1) * num) * inv_den2;
            // dT/dp1 = -beta*g0*num / den^2
            d1[i] = -beta * g0 * num * inv_den2;
        }
    }
    return grad;
}

inline constexpr double kBceClamp = 1e-7;  // probability clamp before logarithms

// Binary average cross-entropy over the foreground probability field.
template <typename T>
T bce_loss(const TensorT<T>& p_fg, const TensorT<T>& t) {
    require_same_shape(p_fg, t, "bce_loss");
    const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
    T acc = T(0);
    const size_t n = p_fg.data.size();
    for (size_t i = 0; i < n; ++i) {
        const T pc = std::clamp(p_fg.data[i], lo, hi);
        acc += t.data[i] * std::log(pc) + (T(1) - t.data[i]) * std::log(T(1) - pc);
    }
    return -acc / static_cast<T>(n);
}

// d(bce)/d(p_fg); zero where the clamp is active.
template <typename T>
TensorT<T> bce_grad(const TensorT<T>& p_fg, const TensorT<T>& t) {
    require_same_shape(p_fg, t, "bce_grad");
    const T lo = static_cast<T>(kBceClamp), hi = T(1) - static_cast<T>(kBceClamp);
    TensorT<T> grad(p_fg.shape);
    const T invn = T(1) / static_cast<T>(p_fg.data.size());
    for (size_t i = 0; i < p_fg.data.size(); ++i) {
        const T pv = p_fg.data[i];
        if (pv < lo || pv > hi) continue;
        grad.data[i] = -(t.data[i] / pv - (T(1) - t.data[i]) / (T(1) - pv)) * invn;
    }
    return grad;
}

// Multi-class cross-entropy over per-voxel class probabilities (NCDHW) and
// one-hot targets of the same shape.
template <typename T>
T ce_loss(const TensorT<T>& p, const TensorT<T>& onehot) {
    require_same_shape(p, onehot, "ce_loss");
    if (p.rank() != 5) throw std::invalid_argument("ce_loss: expected NCDHW probabilities");
    const int64_t M = p.dim(1);
    if (M < 2) throw std::invalid_argument("ce_loss: needs M >= 2 classes, got " + std::to_string(M));
    const T lo = static_cast<T>(kBceClamp);
    const int64_t N = p.dim(0), S = p.dim(2) * p.dim(3) * p.dim(4);
    T acc = T(0);
    for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < M; ++c) {
            const T* pv = p.data.data() + (n * M + c) * S;
            const T* tv = onehot.data.data() + (n * M + c) * S;
            for (int64_t i = 0; i < S; ++i)
                if (tv[i] != T(0)) acc += tv[i] * std::log(std::max(pv[i], lo));
        }
    return -acc / static_cast<T>(N * S);
}

// Weights for epoch t from the component losses of epoch t-1: each weight is
// the share of its loss in the previous total. Both zero means a degenerate
// perfect fit; fall back to an even split.
inline AdaptiveWeights adaptive_weights(const LossReport& prev) {
    if (prev.l_tversky < 0 || prev.l_bce < 0)
        throw std::invalid_argument("adaptive_weights: negative component loss");
    AdaptiveWeights w;
    w.epoch = prev.weights.epoch + 1;
    const double sum = prev.l_tversky + prev.l_bce;
    if (sum == 0) {
        w.w_tversky = 0.5;
    } else {
        w.w_tversky = prev.l_tversky / sum;
    }
    w.w_bce = 1.0 - w.w_tversky;
    return w;
}

inline AdaptiveWeights initial_weights() { return AdaptiveWeights{0.5, 0.5, 0}; }

// Fixed weights for the plain-Tversky configuration.
inline AdaptiveWeights tversky_only_weights(int64_t epoch) { return AdaptiveWeights{1.0, 0.0, epoch}; }

// Foreground channel of a softmax field as a flat tensor matching the labels.
template <typename T>
TensorT<T> slice_foreground(const SoftmaxFieldT<T>& p) {
    const int64_t N = p.p.dim(0), C = p.p.dim(1);
    const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
    TensorT<T> out({N, S});
    for (int64_t n = 0; n < N; ++n)
        std::copy_n(p.p.data.data() + n * C * S, S, out.data.data() + n * S);
    return out;
}

template <typename T>
TensorT<T> g_flat(const TensorT<T>& g) {
    TensorT<T> out;
    const int64_t N = g.rank() == 5 ? g.dim(0) : 1;
    out.shape = {N, g.numel() / N};
    out.data = g.data;
    return out;
}

template <typename T>
LossReport total_loss(const SoftmaxFieldT<T>& p, const TensorT<T>& g, const AdaptiveWeights& w,
                      const TverskyParams& params) {
    LossReport r;
    r.weights = w;
    r.l_tversky = static_cast<double>(tversky_loss(p, g, params));
    r.l_bce = static_cast<double>(bce_loss(slice_foreground(p), g_flat(g)));
    r.l_total = w.w_tversky * r.l_tversky + w.w_bce * r.l_bce;
    return r;
}

// d(l_total)/d(logits) for p = softmax(logits): the Tversky term chains
// through the softmax Jacobian, while the cross-entropy term uses the fused
// (p - t)/N form, which stays finite and informative even when the softmax
// saturates and p-space gradients underflow.
template <typename T>
TensorT<T> total_loss_logit_grad(const SoftmaxFieldT<T>& p, const TensorT<T>& g,
                                 const AdaptiveWeights& w, const TverskyParams& params) {
    const int64_t N = p.p.dim(0), C = p.p.dim(1);
    const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
    if (C != 2)
        throw std::invalid_argument("total_loss_logit_grad: binary fusion requires 2 channels");

    TensorT<T> grad({N, C, p.p.dim(2), p.p.dim(3), p.p.dim(4)});
    if (w.w_tversky != 0) {
        TensorT<T> tg = tversky_grad(p, g, params);
        const T wt = static_cast<T>(w.w_tversky);
        for (auto& v : tg.data) v *= -wt;
        grad = softmax_channels_backward(p.p, tg);
    }
    if (w.w_bce != 0) {
        const T scale = static_cast<T>(w.w_bce) / static_cast<T>(N * S);
        for (int64_t n = 0; n < N; ++n) {
            const T* p0 = p.p.data.data() + n * C * S;
            const T* p1 = p0 + S;
            const T* gv = g.data.data() + n * S;
            T* d0 = grad.data.data() + n * C * S;
            T* d1 = d0 + S;
            for (int64_t i = 0; i < S; ++i) {
                d0[i] += scale * (p0[i] - gv[i]);
                d1[i] += scale * (p1[i] - (T(1) - gv[i]));
            }
        }
    }
    return grad;
}

// d(l_total)/dp over both channels: the Tversky term sees both, BCE only p0.
template <typename T>
TensorT<T> total_loss_grad(const SoftmaxFieldT<T>& p, const TensorT<T>& g, const AdaptiveWeights& w,
                           const TverskyParams& params) {
    TensorT<T> grad = tversky_grad(p, g, params);
    const T wt = static_cast<T>(w.w_tversky);
    for (auto& v : grad.data) v *= -wt;  // loss gradient is the negated index gradient

    if (w.w_bce != 0) {
        const TensorT<T> gb = bce_grad(slice_foreground(p), g_flat(g));
        const T wb = static_cast<T>(w.w_bce);
        const int64_t N = p.p.dim(0), C = p.p.dim(1);
        const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
        for (int64_t n = 0; n < N; ++n) {
            T* d0 = grad.data.data() + n * C * S;
            const T* gv = gb.data.data() + n * S;
            for (int64_t i = 0; i < S; ++i) d0[i] += wb * gv[i];
        }
    }
    return grad;
}

}  // namespace voxseg
