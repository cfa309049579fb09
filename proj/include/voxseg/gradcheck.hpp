#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "voxseg/losses.hpp"
#include "voxseg/rng.hpp"
#include "voxseg/unet3d.hpp"

// Finite-difference verification of the analytic gradients, all in double
// precision.
//
// Loss level: the Tversky index is smooth in (p0, p1), so plain central
// differences at h = 1e-5 are a sharp oracle.
//
// End to end: the network is piecewise smooth (ReLU and max-pool kinks). For
// each probed parameter we take a 4th-order central stencil at h = 1e-3 and
// accept the probe only when every evaluation point has the same ReLU sign
// pattern and pool argmaxes as the base point; probes that cross a kink are
// not valid finite-difference oracles and are skipped, with the coverage
// reported and required to stay high.

namespace voxseg {

struct GradCheckReport {
    std::string name;
    double tolerance = 0;
    double max_rel_err = 0;
    int64_t checked = 0;
    int64_t skipped = 0;
    std::string worst_at;
    bool pass = false;

    std::string summary() const {
        char buf[256];
        std::snprintf(buf, sizeof(buf), "%-24s max rel err %.3e (tol %.0e, %lld checked, %lld skipped)%s",
                      name.c_str(), max_rel_err, tolerance, static_cast<long long>(checked),
                      static_cast<long long>(skipped), worst_at.empty() ? "" : (" worst: " + worst_at).c_str());
        return buf;
    }
};

using TverskyGradFn = std::function<TensorT<double>(const SoftmaxFieldT<double>&,
                                                    const TensorT<double>&, const TverskyParams&)>;

inline TverskyGradFn default_tversky_grad() {
    return [](const SoftmaxFieldT<double>& p, const TensorT<double>& g, const TverskyParams& tp) {
        return tversky_grad(p, g, tp);
    };
}

// Central differences of the Tversky index w.r.t. every p0/p1 entry, over
// random instances up to 6^3 voxels for each (alpha, beta) pair.
inline GradCheckReport check_tversky_gradients(uint64_t seed = 1234, int instances = 20,
                                               double h = 1e-5, double tol = 1e-4,
                                               TverskyGradFn grad_fn = default_tversky_grad()) {
    GradCheckReport rep;
    rep.name = "tversky-loss-gradient";
    rep.tolerance = tol;
    Rng rng(seed);
    const std::vector<std::pair<double, double>> presets = {{0.7, 0.3}, {0.5, 0.5}, {1.0, 1.0}};

    for (const auto& [alpha, beta] : presets) {
        TverskyParams tp{alpha, beta, 1e-6};
        for (int inst = 0; inst < instances; ++inst) {
            const int64_t e = 2 + rng.index(5);  // edge in [2, 6]
            TensorT<double> p({1, 2, e, e, e});
            TensorT<double> g({1, 1, e, e, e});
            const int64_t S = e * e * e;
            for (int64_t i = 0; i < S; ++i) {
                const double p0 = rng.uniform(0.02, 0.98);
                p.data[static_cast<size_t>(i)] = p0;
                p.data[static_cast<size_t>(S + i)] = 1.0 - p0;
                g.data[static_cast<size_t>(i)] = rng.uniform() < 0.35 ? 1.0 : 0.0;
            }
            SoftmaxFieldT<double> field{p};
            const TensorT<double> analytic = grad_fn(field, g, tp);

            for (int64_t i = 0; i < 2 * S; ++i) {
                double& v = field.p.data[static_cast<size_t>(i)];
                const double orig = v;
                v = orig + h;
                const double tp_hi = tversky_index(field, g, tp);
                v = orig - h;
                const double tp_lo = tversky_index(field, g, tp);
                v = orig;
                const double fd = (tp_hi - tp_lo) / (2 * h);
                const double an = analytic.data[static_cast<size_t>(i)];
                const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), 1e-12});
                ++rep.checked;
                if (rel > rep.max_rel_err) {
                    rep.max_rel_err = rel;
                    rep.worst_at = "alpha=" + std::to_string(alpha) + " beta=" + std::to_string(beta) +
                                   " instance=" + std::to_string(inst) + " flat_index=" + std::to_string(i);
                }
            }
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

namespace detail {

// 64-bit hash over every ReLU input sign and every max-pool argmax; two
// states with equal hashes share the same piecewise-linear region.
template <typename T>
uint64_t kink_signature(const OpGraph& g, const ForwardTraceT<T>& tr) {
    uint64_t h = 14695981039346656037ull;
    const auto mix = [&h](uint64_t v) {
        h ^= v;
        h *= 1099511628211ull;
    };
    for (size_t id = 1; id < g.nodes.size(); ++id) {
        const OpNode& n = g.nodes[id];
        if (n.kind == OpKind::Relu) {
            const auto& in = tr.values[static_cast<size_t>(n.inputs[0])];
            for (size_t i = 0; i < in.data.size(); ++i) mix(in.data[i] > 0 ? 2 * i + 1 : 2 * i);
        } else if (n.kind == OpKind::MaxPool3d) {
            const auto& in = tr.values[static_cast<size_t>(n.inputs[0])];
            const int64_t N = in.dim(0), C = in.dim(1), D = in.dim(2), H = in.dim(3), W = in.dim(4);
            const int64_t win = n.window;
            for (int64_t nc = 0; nc < N * C; ++nc) {
                const T* c = in.data.data() + nc * D * H * W;
                for (int64_t z = 0; z < D / win; ++z)
                    for (int64_t y = 0; y < H / win; ++y)
                        for (int64_t x = 0; x < W / win; ++x) {
                            int64_t arg = ((z * win) * H + y * win) * W + x * win;
                            T best = c[arg];
                            for (int64_t kd = 0; kd < win; ++kd)
                                for (int64_t kh = 0; kh < win; ++kh)
                                    for (int64_t kw = 0; kw < win; ++kw) {
                                        const int64_t i =
                                            ((z * win + kd) * H + y * win + kh) * W + x * win + kw;
                                        if (c[i] > best) {
                                            best = c[i];
                                            arg = i;
                                        }
                                    }
                            mix(static_cast<uint64_t>(arg));
                        }
            }
        }
    }
    return h;
}

}  // namespace detail

// End-to-end check of the total-loss gradient through the whole network on a
// 4^3 input, depth 1, base 2. Requires at least min_coverage of parameters to
// yield kink-stable probes.
inline GradCheckReport check_end_to_end(const ModelConfig& cfg, uint64_t seed = 7, double h = 1e-3,
                                        double tol = 1e-3, double min_coverage = 0.75) {
    GradCheckReport rep;
    rep.name = cfg.downsample_mode == Downsample::MaxPool ? "end-to-end (max_pool)"
                                                          : "end-to-end (strided_conv)";
    rep.tolerance = tol;

    Model mf = build_model<float>(cfg);
    init_params(mf, seed);
    ModelT<double> m = mf.cast<double>();
    Rng rng(seed * 13 + 1);
    // jitter every parameter so zero-initialized biases sit off the ReLU kink
    for (auto& t : m.params.tensors)
        for (auto& v : t.data) v += rng.uniform(-0.05, 0.05);

    TensorT<double> x({1, 1, 4, 4, 4});
    for (auto& v : x.data) v = rng.uniform();
    TensorT<double> g({1, 1, 4, 4, 4});
    for (auto& v : g.data) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    const TverskyParams tp{0.7, 0.3, 1e-6};
    const AdaptiveWeights w = initial_weights();

    const auto eval_loss = [&](uint64_t* sig) {
        const ForwardTraceT<double> tr = graph_forward(m.graph, m.params, x);
        if (sig) *sig = detail::kink_signature(m.graph, tr);
        const auto field = make_softmax_field(TensorT<double>(graph_output(m.graph, tr)));
        return total_loss(field, g, w, tp).l_total;
    };

    uint64_t base_sig = 0;
    eval_loss(&base_sig);
    const auto [field, trace] = forward_traced(m, x);
    const TensorT<double> lg = total_loss_grad(field, g, w, tp);
    const std::vector<TensorT<double>> grads = graph_backward(m.graph, m.params, trace, lg);

    double gscale = 0;
    for (const auto& gr : grads)
        for (double v : gr.data) gscale = std::max(gscale, std::fabs(v));
    const double tau = 1e-6 * gscale;

    for (size_t p = 0; p < m.params.tensors.size(); ++p) {
        for (size_t i = 0; i < m.params.tensors[p].data.size(); ++i) {
            double& v = m.params.tensors[p].data[i];
            const double orig = v;
            uint64_t s1, s2, s3, s4;
            v = orig + 2 * h;
            const double l2p = eval_loss(&s1);
            v = orig + h;
            const double lp = eval_loss(&s2);
            v = orig - h;
            const double lm = eval_loss(&s3);
            v = orig - 2 * h;
            const double l2m = eval_loss(&s4);
            v = orig;
            if (s1 != base_sig || s2 != base_sig || s3 != base_sig || s4 != base_sig) {
                ++rep.skipped;
                continue;
            }
            const double fd = (-l2p + 8 * lp - 8 * lm + l2m) / (12 * h);
            const double an = grads[p].data[i];
            const double rel = std::fabs(fd - an) / std::max({std::fabs(fd), std::fabs(an), tau});
            ++rep.checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_at = "seed=" + std::to_string(seed) + " param=" + m.params.names[p] +
                               "[" + std::to_string(i) + "]";
            }
        }
    }
    const double coverage =
        static_cast<double>(rep.checked) / static_cast<double>(rep.checked + rep.skipped);
    rep.pass = rep.max_rel_err <= tol && coverage >= min_coverage;
    return rep;
}

inline ModelConfig gradcheck_model_config(Downsample mode) {
    ModelConfig cfg;
    cfg.depth = 1;
    cfg.base_channels = 2;
    cfg.downsample_mode = mode;
    return cfg;
}

}  // namespace voxseg
