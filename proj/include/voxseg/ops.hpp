#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <type_traits>

#include "voxseg/tensor.hpp"

// Dense CPU kernels for the network ops, forward and backward. Every output
// element is owned by exactly one loop iteration and every reduction runs in
// a fixed order, so results are identical for any worker count.

namespace voxseg {

struct ConvAttrs {
    int64_t stride = 1;
    int64_t padding = 0;
    int64_t dilation = 1;
};

inline int64_t conv_out_extent(int64_t in, int64_t k, const ConvAttrs& a) {
    return (in + 2 * a.padding - a.dilation * (k - 1) - 1) / a.stride + 1;
}

namespace detail {

inline void check_5d(const std::vector<int64_t>& s, const char* what) {
    if (s.size() != 5)
        throw std::invalid_argument(std::string(what) + ": expected rank-5 NCDHW tensor, got " +
                                    shape_string(s));
}

// Valid output range [lo, hi] for which x*stride + off lands inside [0, in_extent).
inline void valid_out_range(int64_t out_extent, int64_t in_extent, int64_t stride, int64_t off,
                            int64_t& lo, int64_t& hi) {
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const int64_t num = in_extent - 1 - off;
    hi = num < 0 ? -1 : std::min(out_extent - 1, num / stride);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// conv3d: zero-padded cubic-kernel 3-D convolution, NCDHW in, weight
// (Cout, Cin, k, k, k), bias (Cout).
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> conv3d(const TensorT<T>& in, const TensorT<T>& weight, const TensorT<T>& bias,
                  const ConvAttrs& at) {
    detail::check_5d(in.shape, "conv3d input");
    detail::check_5d(weight.shape, "conv3d weight");
    if (weight.dim(2) != weight.dim(3) || weight.dim(2) != weight.dim(4))
        throw std::invalid_argument("conv3d: kernel must be cubic, got " + shape_string(weight.shape));
    const int64_t N = in.dim(0), Ci = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const int64_t Co = weight.dim(0), k = weight.dim(2);
    if (weight.dim(1) != Ci)
        throw std::invalid_argument("conv3d: axis C mismatch, input has " + std::to_string(Ci) +
                                    " channels but weight expects " + std::to_string(weight.dim(1)));
    if (bias.rank() != 1 || bias.dim(0) != Co)
        throw std::invalid_argument("conv3d: bias must have shape (" + std::to_string(Co) + ")");
    if (at.stride < 1 || at.dilation < 1 || at.padding < 0)
        throw std::invalid_argument("conv3d: stride/dilation must be >= 1 and padding >= 0");

    const int64_t Do = conv_out_extent(D, k, at), Ho = conv_out_extent(H, k, at),
                  Wo = conv_out_extent(W, k, at);
    if (Do < 1) throw std::invalid_argument("conv3d: axis D extent " + std::to_string(D) + " admits no kernel placement");
    if (Ho < 1) throw std::invalid_argument("conv3d: axis H extent " + std::to_string(H) + " admits no kernel placement");
    if (Wo < 1) throw std::invalid_argument("conv3d: axis W extent " + std::to_string(W) + " admits no kernel placement");

    TensorT<T> out({N, Co, Do, Ho, Wo});
    const int64_t s = at.stride, p = at.padding, dl = at.dilation;
    const T* in_base = in.data.data();
    const T* w_base = weight.data.data();
    T* out_base = out.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * Co; ++nc) {
        const int64_t n = nc / Co, co = nc % Co;
        const T* in_n = in_base + n * Ci * D * H * W;
        T* out_nc = out_base + nc * Do * Ho * Wo;
        const T b = bias.data[static_cast<size_t>(co)];
        for (int64_t z = 0; z < Do; ++z) {
            for (int64_t y = 0; y < Ho; ++y) {
                T* orow = out_nc + (z * Ho + y) * Wo;
                for (int64_t x = 0; x < Wo; ++x) orow[x] = b;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const T* in_c = in_n + ci * D * H * W;
                    const T* w_c = w_base + (co * Ci + ci) * k * k * k;
                    for (int64_t kd = 0; kd < k; ++kd) {
                        const int64_t zi = z * s - p + kd * dl;
                        if (zi < 0 || zi >= D) continue;
                        for (int64_t kh = 0; kh < k; ++kh) {
                            const int64_t yi = y * s - p + kh * dl;
                            if (yi < 0 || yi >= H) continue;
                            const T* irow = in_c + (zi * H + yi) * W;
                            const T* wrow = w_c + (kd * k + kh) * k;
                            for (int64_t kw = 0; kw < k; ++kw) {
                                const T wv = wrow[kw];
                                const int64_t off = kw * dl - p;
                                int64_t xlo, xhi;
                                detail::valid_out_range(Wo, W, s, off, xlo, xhi);
                                if (s == 1) {
                                    const T* ir = irow + off;
                                    for (int64_t x = xlo; x <= xhi; ++x) orow[x] += wv * ir[x];
                                } else {
                                    for (int64_t x = xlo; x <= xhi; ++x) orow[x] += wv * irow[x * s + off];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void conv3d_backward(const TensorT<T>& in, const TensorT<T>& weight, const ConvAttrs& at,
                     const TensorT<T>& grad_out, std::type_identity_t<TensorT<T>*> grad_in,
                     std::type_identity_t<TensorT<T>*> grad_w,
                     std::type_identity_t<TensorT<T>*> grad_b) {
    const int64_t N = in.dim(0), Ci = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const int64_t Co = weight.dim(0), k = weight.dim(2);
    const int64_t Do = grad_out.dim(2), Ho = grad_out.dim(3), Wo = grad_out.dim(4);
    const int64_t s = at.stride, p = at.padding, dl = at.dilation;
    const T* go_base = grad_out.data.data();
    const T* in_base = in.data.data();
    const T* w_base = weight.data.data();

    if (grad_b) {
        *grad_b = TensorT<T>({Co});
#pragma omp parallel for schedule(static)
        for (int64_t co = 0; co < Co; ++co) {
            T acc = T(0);
            for (int64_t n = 0; n < N; ++n) {
                const T* go = go_base + (n * Co + co) * Do * Ho * Wo;
                for (int64_t i = 0; i < Do * Ho * Wo; ++i) acc += go[i];
            }
            grad_b->data[static_cast<size_t>(co)] = acc;
        }
    }

    if (grad_w) {
        *grad_w = TensorT<T>(weight.shape);
        T* gw_base = grad_w->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t co = 0; co < Co; ++co) {
            T* gw_co = gw_base + co * Ci * k * k * k;
            for (int64_t n = 0; n < N; ++n) {
                const T* go_nc = go_base + (n * Co + co) * Do * Ho * Wo;
                const T* in_n = in_base + n * Ci * D * H * W;
                for (int64_t ci = 0; ci < Ci; ++ci) {
                    const T* in_c = in_n + ci * D * H * W;
                    T* gw_c = gw_co + ci * k * k * k;
                    for (int64_t z = 0; z < Do; ++z) {
                        for (int64_t kd = 0; kd < k; ++kd) {
                            const int64_t zi = z * s - p + kd * dl;
                            if (zi < 0 || zi >= D) continue;
                            for (int64_t y = 0; y < Ho; ++y) {
                                const T* grow = go_nc + (z * Ho + y) * Wo;
                                for (int64_t kh = 0; kh < k; ++kh) {
                                    const int64_t yi = y * s - p + kh * dl;
                                    if (yi < 0 || yi >= H) continue;
                                    const T* irow = in_c + (zi * H + yi) * W;
                                    T* gw_row = gw_c + (kd * k + kh) * k;
                                    for (int64_t kw = 0; kw < k; ++kw) {
                                        const int64_t off = kw * dl - p;
                                        int64_t xlo, xhi;
                                        detail::valid_out_range(Wo, W, s, off, xlo, xhi);
                                        T acc = T(0);
                                        if (s == 1) {
                                            const T* ir = irow + off;
                                            for (int64_t x = xlo; x <= xhi; ++x) acc += grow[x] * ir[x];
                                        } else {
                                            for (int64_t x = xlo; x <= xhi; ++x)
                                                acc += grow[x] * irow[x * s + off];
                                        }
                                        gw_row[kw] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (grad_in) {
        *grad_in = TensorT<T>(in.shape);
        T* gi_base = grad_in->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t nc = 0; nc < N * Ci; ++nc) {
            const int64_t n = nc / Ci, ci = nc % Ci;
            T* gi_c = gi_base + nc * D * H * W;
            for (int64_t co = 0; co < Co; ++co) {
                const T* go_nc = go_base + (n * Co + co) * Do * Ho * Wo;
                const T* w_c = w_base + (co * Ci + ci) * k * k * k;
                for (int64_t z = 0; z < Do; ++z) {
                    for (int64_t kd = 0; kd < k; ++kd) {
                        const int64_t zi = z * s - p + kd * dl;
                        if (zi < 0 || zi >= D) continue;
                        for (int64_t y = 0; y < Ho; ++y) {
                            const T* grow = go_nc + (z * Ho + y) * Wo;
                            for (int64_t kh = 0; kh < k; ++kh) {
                                const int64_t yi = y * s - p + kh * dl;
                                if (yi < 0 || yi >= H) continue;
                                T* girow = gi_c + (zi * H + yi) * W;
                                const T* wrow = w_c + (kd * k + kh) * k;
                                for (int64_t kw = 0; kw < k; ++kw) {
                                    const T wv = wrow[kw];
                                    const int64_t off = kw * dl - p;
                                    int64_t xlo, xhi;
                                    detail::valid_out_range(Wo, W, s, off, xlo, xhi);
                                    if (s == 1) {
                                        T* gir = girow + off;
                                        for (int64_t x = xlo; x <= xhi; ++x) gir[x] += wv * grow[x];
                                    } else {
                                        for (int64_t x = xlo; x <= xhi; ++x)
                                            girow[x * s + off] += wv * grow[x];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// transposed_conv3d: adjoint of the stride-matched zero-padding-free conv3d.
// Input (N, Ca, D, H, W), weight (Ca, Cb, k, k, k), output extent (D-1)*s + k.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> transposed_conv3d(const TensorT<T>& in, const TensorT<T>& weight, int64_t stride) {
    detail::check_5d(in.shape, "transposed_conv3d input");
    detail::check_5d(weight.shape, "transposed_conv3d weight");
    if (weight.dim(2) != weight.dim(3) || weight.dim(2) != weight.dim(4))
        throw std::invalid_argument("transposed_conv3d: kernel must be cubic, got " +
                                    shape_string(weight.shape));
    if (stride < 1) throw std::invalid_argument("transposed_conv3d: stride must be >= 1");
    const int64_t N = in.dim(0), Ca = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const int64_t Cb = weight.dim(1), k = weight.dim(2);
    if (weight.dim(0) != Ca)
        throw std::invalid_argument("transposed_conv3d: axis C mismatch, input has " +
                                    std::to_string(Ca) + " channels but weight expects " +
                                    std::to_string(weight.dim(0)));

    const int64_t Do = (D - 1) * stride + k, Ho = (H - 1) * stride + k, Wo = (W - 1) * stride + k;
    TensorT<T> out({N, Cb, Do, Ho, Wo});
    const T* in_base = in.data.data();
    const T* w_base = weight.data.data();
    T* out_base = out.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * Cb; ++nc) {
        const int64_t n = nc / Cb, cb = nc % Cb;
        T* out_nc = out_base + nc * Do * Ho * Wo;
        for (int64_t ca = 0; ca < Ca; ++ca) {
            const T* in_c = in_base + (n * Ca + ca) * D * H * W;
            const T* w_c = w_base + (ca * Cb + cb) * k * k * k;
            for (int64_t z = 0; z < D; ++z) {
                for (int64_t y = 0; y < H; ++y) {
                    const T* irow = in_c + (z * H + y) * W;
                    for (int64_t kd = 0; kd < k; ++kd) {
                        for (int64_t kh = 0; kh < k; ++kh) {
                            T* orow = out_nc + ((z * stride + kd) * Ho + y * stride + kh) * Wo;
                            const T* wrow = w_c + (kd * k + kh) * k;
                            for (int64_t kw = 0; kw < k; ++kw) {
                                const T wv = wrow[kw];
                                T* o = orow + kw;
                                for (int64_t x = 0; x < W; ++x) o[x * stride] += wv * irow[x];
                            }
                        }
                    }
                }
            }
        }
    }
    return out;
}

template <typename T>
void transposed_conv3d_backward(const TensorT<T>& in, const TensorT<T>& weight, int64_t stride,
                                const TensorT<T>& grad_out,
                                std::type_identity_t<TensorT<T>*> grad_in,
                                std::type_identity_t<TensorT<T>*> grad_w) {
    const int64_t N = in.dim(0), Ca = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const int64_t Cb = weight.dim(1), k = weight.dim(2);
    const int64_t Ho = grad_out.dim(3), Wo = grad_out.dim(4);
    const int64_t DHWo = grad_out.dim(2) * Ho * Wo;
    const T* go_base = grad_out.data.data();
    const T* in_base = in.data.data();
    const T* w_base = weight.data.data();

    if (grad_in) {
        *grad_in = TensorT<T>(in.shape);
        T* gi_base = grad_in->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t nc = 0; nc < N * Ca; ++nc) {
            const int64_t n = nc / Ca, ca = nc % Ca;
            T* gi_c = gi_base + nc * D * H * W;
            for (int64_t cb = 0; cb < Cb; ++cb) {
                const T* go_nc = go_base + (n * Cb + cb) * DHWo;
                const T* w_c = w_base + (ca * Cb + cb) * k * k * k;
                for (int64_t z = 0; z < D; ++z) {
                    for (int64_t y = 0; y < H; ++y) {
                        T* girow = gi_c + (z * H + y) * W;
                        for (int64_t kd = 0; kd < k; ++kd) {
                            for (int64_t kh = 0; kh < k; ++kh) {
                                const T* grow = go_nc + ((z * stride + kd) * Ho + y * stride + kh) * Wo;
                                const T* wrow = w_c + (kd * k + kh) * k;
                                for (int64_t kw = 0; kw < k; ++kw) {
                                    const T wv = wrow[kw];
                                    const T* g = grow + kw;
                                    for (int64_t x = 0; x < W; ++x) girow[x] += wv * g[x * stride];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    if (grad_w) {
        *grad_w = TensorT<T>(weight.shape);
        T* gw_base = grad_w->data.data();
#pragma omp parallel for schedule(static)
        for (int64_t ca = 0; ca < Ca; ++ca) {
            T* gw_ca = gw_base + ca * Cb * k * k * k;
            for (int64_t n = 0; n < N; ++n) {
                const T* in_c = in_base + (n * Ca + ca) * D * H * W;
                for (int64_t cb = 0; cb < Cb; ++cb) {
                    const T* go_nc = go_base + (n * Cb + cb) * DHWo;
                    T* gw_c = gw_ca + cb * k * k * k;
                    for (int64_t z = 0; z < D; ++z) {
                        for (int64_t y = 0; y < H; ++y) {
                            const T* irow = in_c + (z * H + y) * W;
                            for (int64_t kd = 0; kd < k; ++kd) {
                                for (int64_t kh = 0; kh < k; ++kh) {
                                    const T* grow =
                                        go_nc + ((z * stride + kd) * Ho + y * stride + kh) * Wo;
                                    T* gw_row = gw_c + (kd * k + kh) * k;
                                    for (int64_t kw = 0; kw < k; ++kw) {
                                        const T* g = grow + kw;
                                        T acc = T(0);
                                        for (int64_t x = 0; x < W; ++x) acc += irow[x] * g[x * stride];
                                        gw_row[kw] += acc;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// maxpool3d over disjoint window^3 blocks. Extents must divide evenly; no
// implicit cropping.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> maxpool3d(const TensorT<T>& in, int64_t window = 2) {
    detail::check_5d(in.shape, "maxpool3d input");
    if (window < 1) throw std::invalid_argument("maxpool3d: window must be >= 1");
    const int64_t N = in.dim(0), C = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const char* axes = "DHW";
    const int64_t ext[3] = {D, H, W};
    for (int i = 0; i < 3; ++i)
        if (ext[i] % window != 0)
            throw std::invalid_argument("maxpool3d: axis " + std::string(1, axes[i]) + " extent " +
                                        std::to_string(ext[i]) + " not divisible by window " +
                                        std::to_string(window));
    TensorT<T> out({N, C, D / window, H / window, W / window});
    const int64_t Do = D / window, Ho = H / window, Wo = W / window;
    const T* in_base = in.data.data();
    T* out_base = out.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* in_c = in_base + nc * D * H * W;
        T* out_c = out_base + nc * Do * Ho * Wo;
        for (int64_t z = 0; z < Do; ++z)
            for (int64_t y = 0; y < Ho; ++y)
                for (int64_t x = 0; x < Wo; ++x) {
                    T best = in_c[((z * window) * H + y * window) * W + x * window];
                    for (int64_t kd = 0; kd < window; ++kd)
                        for (int64_t kh = 0; kh < window; ++kh)
                            for (int64_t kw = 0; kw < window; ++kw) {
                                const T v = in_c[((z * window + kd) * H + y * window + kh) * W +
                                                 x * window + kw];
                                if (v > best) best = v;
                            }
                    out_c[(z * Ho + y) * Wo + x] = best;
                }
    }
    return out;
}

// Routes each output gradient to the first maximum in scan order (ties are
// deterministic).
template <typename T>
TensorT<T> maxpool3d_backward(const TensorT<T>& in, int64_t window, const TensorT<T>& grad_out) {
    const int64_t N = in.dim(0), C = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
    const int64_t Do = D / window, Ho = H / window, Wo = W / window;
    TensorT<T> grad_in(in.shape);
    const T* in_base = in.data.data();
    const T* go_base = grad_out.data.data();
    T* gi_base = grad_in.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t nc = 0; nc < N * C; ++nc) {
        const T* in_c = in_base + nc * D * H * W;
        const T* go_c = go_base + nc * Do * Ho * Wo;
        T* gi_c = gi_base + nc * D * H * W;
        for (int64_t z = 0; z < Do; ++z)
            for (int64_t y = 0; y < Ho; ++y)
                for (int64_t x = 0; x < Wo; ++x) {
                    int64_t arg = ((z * window) * H + y * window) * W + x * window;
                    T best = in_c[arg];
                    for (int64_t kd = 0; kd < window; ++kd)
                        for (int64_t kh = 0; kh < window; ++kh)
                            for (int64_t kw = 0; kw < window; ++kw) {
                                const int64_t i = ((z * window + kd) * H + y * window + kh) * W +
                                                  x * window + kw;
                                if (in_c[i] > best) {
                                    best = in_c[i];
                                    arg = i;
                                }
                            }
                    gi_c[arg] += go_c[(z * Ho + y) * Wo + x];
                }
    }
    return grad_in;
}

// ---------------------------------------------------------------------------
// relu (subgradient 0 at x = 0), channel softmax, channel concat, add.
// ---------------------------------------------------------------------------

template <typename T>
TensorT<T> relu(const TensorT<T>& in) {
    TensorT<T> out;
    out.shape = in.shape;
    out.data.resize(in.data.size());
    const int64_t n = in.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        out.data[static_cast<size_t>(i)] = in.data[static_cast<size_t>(i)] > T(0)
                                               ? in.data[static_cast<size_t>(i)]
                                               : T(0);
    return out;
}

template <typename T>
TensorT<T> relu_backward(const TensorT<T>& in, const TensorT<T>& grad_out) {
    TensorT<T> grad_in;
    grad_in.shape = in.shape;
    grad_in.data.resize(in.data.size());
    const int64_t n = in.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        grad_in.data[static_cast<size_t>(i)] =
            in.data[static_cast<size_t>(i)] > T(0) ? grad_out.data[static_cast<size_t>(i)] : T(0);
    return grad_in;
}

// Per-voxel exponential normalization over the channel axis, computed with
// max subtraction.
template <typename T>
TensorT<T> softmax_channels(const TensorT<T>& in) {
    detail::check_5d(in.shape, "softmax_channels input");
    const int64_t N = in.dim(0), C = in.dim(1);
    if (C < 2) throw std::invalid_argument("softmax_channels: needs C >= 2, got C = " + std::to_string(C));
    const int64_t S = in.dim(2) * in.dim(3) * in.dim(4);
    TensorT<T> out;
    out.shape = in.shape;
    out.data.resize(in.data.size());
    const T* in_base = in.data.data();
    T* out_base = out.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t ns = 0; ns < N * S; ++ns) {
        const int64_t n = ns / S, sp = ns % S;
        const T* v = in_base + n * C * S + sp;
        T* o = out_base + n * C * S + sp;
        T m = v[0];
        for (int64_t c = 1; c < C; ++c) m = std::max(m, v[c * S]);
        T sum = T(0);
        for (int64_t c = 0; c < C; ++c) {
            const T e = std::exp(v[c * S] - m);
            o[c * S] = e;
            sum += e;
        }
        const T inv = T(1) / sum;
        for (int64_t c = 0; c < C; ++c) o[c * S] *= inv;
    }
    return out;
}

// Backward from the cached softmax output p: dz_c = p_c * (g_c - sum_k g_k p_k).
template <typename T>
TensorT<T> softmax_channels_backward(const TensorT<T>& p, const TensorT<T>& grad_out) {
    const int64_t N = p.dim(0), C = p.dim(1);
    const int64_t S = p.dim(2) * p.dim(3) * p.dim(4);
    TensorT<T> grad_in;
    grad_in.shape = p.shape;
    grad_in.data.resize(p.data.size());
    const T* p_base = p.data.data();
    const T* g_base = grad_out.data.data();
    T* gi_base = grad_in.data.data();

#pragma omp parallel for schedule(static)
    for (int64_t ns = 0; ns < N * S; ++ns) {
        const int64_t n = ns / S, sp = ns % S;
        const T* pv = p_base + n * C * S + sp;
        const T* gv = g_base + n * C * S + sp;
        T* o = gi_base + n * C * S + sp;
        T dot = T(0);
        for (int64_t c = 0; c < C; ++c) dot += gv[c * S] * pv[c * S];
        for (int64_t c = 0; c < C; ++c) o[c * S] = pv[c * S] * (gv[c * S] - dot);
    }
    return grad_in;
}

template <typename T>
TensorT<T> concat_channels(const TensorT<T>& a, const TensorT<T>& b) {
    detail::check_5d(a.shape, "concat_channels lhs");
    detail::check_5d(b.shape, "concat_channels rhs");
    const char axes[4] = {'N', 'D', 'H', 'W'};
    const int idx[4] = {0, 2, 3, 4};
    for (int i = 0; i < 4; ++i)
        if (a.dim(idx[i]) != b.dim(idx[i]))
            throw std::invalid_argument(std::string("concat_channels: axis ") + axes[i] +
                                        " mismatch " + shape_string(a.shape) + " vs " +
                                        shape_string(b.shape));
    const int64_t N = a.dim(0), Ca = a.dim(1), Cb = b.dim(1);
    const int64_t S = a.dim(2) * a.dim(3) * a.dim(4);
    TensorT<T> out({N, Ca + Cb, a.dim(2), a.dim(3), a.dim(4)});
    for (int64_t n = 0; n < N; ++n) {
        std::copy_n(a.data.data() + n * Ca * S, Ca * S, out.data.data() + n * (Ca + Cb) * S);
        std::copy_n(b.data.data() + n * Cb * S, Cb * S,
                    out.data.data() + n * (Ca + Cb) * S + Ca * S);
    }
    return out;
}

template <typename T>
void concat_channels_backward(int64_t ca, const TensorT<T>& grad_out, TensorT<T>& grad_a,
                              TensorT<T>& grad_b) {
    const int64_t N = grad_out.dim(0), C = grad_out.dim(1), cb = C - ca;
    const int64_t S = grad_out.dim(2) * grad_out.dim(3) * grad_out.dim(4);
    grad_a = TensorT<T>({N, ca, grad_out.dim(2), grad_out.dim(3), grad_out.dim(4)});
    grad_b = TensorT<T>({N, cb, grad_out.dim(2), grad_out.dim(3), grad_out.dim(4)});
    for (int64_t n = 0; n < N; ++n) {
        std::copy_n(grad_out.data.data() + n * C * S, ca * S, grad_a.data.data() + n * ca * S);
        std::copy_n(grad_out.data.data() + n * C * S + ca * S, cb * S,
                    grad_b.data.data() + n * cb * S);
    }
}

template <typename T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    require_same_shape(a, b, "add");
    TensorT<T> out;
    out.shape = a.shape;
    out.data.resize(a.data.size());
    const int64_t n = a.numel();
#pragma omp parallel for schedule(static)
    for (int64_t i = 0; i < n; ++i)
        out.data[static_cast<size_t>(i)] =
            a.data[static_cast<size_t>(i)] + b.data[static_cast<size_t>(i)];
    return out;
}

// Channel slice [c0, c1) of an NCDHW tensor.
template <typename T>
TensorT<T> slice_channels(const TensorT<T>& t, int64_t c0, int64_t c1) {
    detail::check_5d(t.shape, "slice_channels input");
    if (c0 < 0 || c1 > t.dim(1) || c0 >= c1)
        throw std::invalid_argument("slice_channels: bad channel range [" + std::to_string(c0) +
                                    ", " + std::to_string(c1) + ") for C = " + std::to_string(t.dim(1)));
    const int64_t N = t.dim(0), C = t.dim(1), S = t.dim(2) * t.dim(3) * t.dim(4);
    TensorT<T> out({N, c1 - c0, t.dim(2), t.dim(3), t.dim(4)});
    for (int64_t n = 0; n < N; ++n)
        std::copy_n(t.data.data() + (n * C + c0) * S, (c1 - c0) * S,
                    out.data.data() + n * (c1 - c0) * S);
    return out;
}

}  // namespace voxseg
