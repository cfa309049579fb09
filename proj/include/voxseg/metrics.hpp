#pragma once

#include <cstdint>
#include <stdexcept>

#include "voxseg/losses.hpp"
#include "voxseg/tensor.hpp"

namespace voxseg {

struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;

    int64_t total() const { return tp + tn + fp + fn; }

    // Counts from disjoint sub-volumes merge additively.
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
};

struct Metrics {
    double dsc = 0;
    double f2 = 0;
    double sensitivity = 0;
    double specificity = 0;
    double precision = 0;
};

// Voxel predicted foreground iff p0 >= 0.5; the tie goes to foreground.
template <typename T>
TensorT<uint8_t> binarize(const SoftmaxFieldT<T>& p) {
    const int64_t N = p.p.dim(0), C = p.p.dim(1);
    const int64_t S = p.p.dim(2) * p.p.dim(3) * p.p.dim(4);
    TensorT<uint8_t> out({N, 1, p.p.dim(2), p.p.dim(3), p.p.dim(4)});
    for (int64_t n = 0; n < N; ++n) {
        const T* p0 = p.p.data.data() + n * C * S;
        uint8_t* o = out.data.data() + n * S;
        for (int64_t i = 0; i < S; ++i) o[i] = p0[i] >= T(0.5) ? 1 : 0;
    }
    return out;
}

inline ConfusionCounts confusion(const TensorT<uint8_t>& pred, const TensorT<uint8_t>& truth) {
    if (pred.numel() != truth.numel())
        throw std::invalid_argument("confusion: shape mismatch " + shape_string(pred.shape) +
                                    " vs " + shape_string(truth.shape));
    ConfusionCounts c;
    for (size_t i = 0; i < pred.data.size(); ++i) {
        const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
        if (p && t)
            ++c.tp;
        else if (!p && !t)
            ++c.tn;
        else if (p)
            ++c.fp;
        else
            ++c.fn;
    }
    return c;
}

// A zero denominator scores 1.0 when the masks are identical (fp == fn == 0)
// and 0.0 otherwise; both conventions are deterministic.
inline double safe_ratio(int64_t num, int64_t den, const ConfusionCounts& c) {
    if (den != 0) return static_cast<double>(num) / static_cast<double>(den);
    return (c.fp == 0 && c.fn == 0) ? 1.0 : 0.0;
}

inline Metrics metrics_from_confusion(const ConfusionCounts& c) {
    Metrics m;
    m.dsc = safe_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn, c);
    m.f2 = safe_ratio(5 * c.tp, 5 * c.tp + 4 * c.fn + c.fp, c);
    m.sensitivity = safe_ratio(c.tp, c.tp + c.fn, c);
    m.specificity = safe_ratio(c.tn, c.tn + c.fp, c);
    m.precision = safe_ratio(c.tp, c.tp + c.fp, c);
    return m;
}

}  // namespace voxseg
