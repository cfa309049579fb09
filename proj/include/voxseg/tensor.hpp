#pragma once

#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace voxseg {

inline std::string shape_string(const std::vector<int64_t>& shape) {
    std::ostringstream os;
    os << "(";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ", ";
        os << shape[i];
    }
    os << ")";
    return os.str();
}

// Dense N-dimensional array of scalars, row-major with the last index fastest.
// Activations, parameters and gradients all use the canonical NCDHW layout.
// T is float in training; double instantiations back the gradient-check and
// loss-identity paths.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;

    explicit TensorT(std::vector<int64_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(checked_numel(shape)), fill);
    }

    static int64_t checked_numel(const std::vector<int64_t>& s) {
        if (s.empty()) throw std::invalid_argument("tensor shape must have at least one extent");
        int64_t n = 1;
        for (int64_t e : s) {
            if (e <= 0)
                throw std::invalid_argument("tensor extents must be positive, got " + shape_string(s));
            n *= e;
        }
        return n;
    }

    static TensorT zeros(std::vector<int64_t> s) { return TensorT(std::move(s)); }
    static TensorT full(std::vector<int64_t> s, T v) { return TensorT(std::move(s), v); }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    // NCDHW addressing.
    int64_t idx5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
        return (((n * dim(1) + c) * dim(2) + d) * dim(3) + h) * dim(4) + w;
    }
    T& at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) {
        return data[static_cast<size_t>(idx5(n, c, d, h, w))];
    }
    const T& at5(int64_t n, int64_t c, int64_t d, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(idx5(n, c, d, h, w))];
    }

    // DHW addressing for plain volume grids.
    int64_t idx3(int64_t d, int64_t h, int64_t w) const {
        return (d * dim(1) + h) * dim(2) + w;
    }
    T& at3(int64_t d, int64_t h, int64_t w) { return data[static_cast<size_t>(idx3(d, h, w))]; }
    const T& at3(int64_t d, int64_t h, int64_t w) const {
        return data[static_cast<size_t>(idx3(d, h, w))];
    }

    bool all_finite() const {
        for (const T& v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.reserve(data.size());
        for (const T& v : data) out.data.push_back(static_cast<U>(v));
        return out;
    }
};

using Tensor = TensorT<float>;

template <typename T>
void require_same_shape(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    shape_string(a.shape) + " vs " + shape_string(b.shape));
}

}  // namespace voxseg
