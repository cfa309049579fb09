#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/graph.hpp"
#include "voxseg/losses.hpp"
#include "voxseg/rng.hpp"

// Encoder-decoder with skip concatenation: two padded 3x3x3 conv+ReLU blocks
// per stage, downsampling by max pooling or a 2x2x2 stride-2 convolution,
// feature count doubling per stage, 2x2x2 stride-2 transposed convolutions on
// the way up, and a 1x1x1 head feeding a channel softmax. The dilated variant
// replaces the bottleneck with a cascade of dilated 3x3x3 convolutions whose
// stage outputs are summed channel-wise.

namespace voxseg {

enum class Downsample { MaxPool, StridedConv };

struct ModelConfig {
    int depth = 3;
    int base_channels = 8;
    int in_channels = 1;
    int out_classes = 2;
    Downsample downsample_mode = Downsample::StridedConv;
    bool dilated_bottleneck = false;
    std::vector<int> bottleneck_dilations = {1, 2, 4};

    void validate() const {
        if (depth < 1) throw std::invalid_argument("ModelConfig: depth must be >= 1");
        if (base_channels < 1) throw std::invalid_argument("ModelConfig: base_channels must be >= 1");
        if (in_channels < 1 || out_classes < 2)
            throw std::invalid_argument("ModelConfig: need in_channels >= 1 and out_classes >= 2");
        if (dilated_bottleneck && bottleneck_dilations.empty())
            throw std::invalid_argument("ModelConfig: dilated bottleneck needs at least one rate");
        for (int d : bottleneck_dilations)
            if (d < 1) throw std::invalid_argument("ModelConfig: dilation rates must be >= 1");
    }
};

template <typename T>
struct ModelT {
    OpGraph graph;
    ParamStore<T> params;
    ModelConfig config;

    template <typename U>
    ModelT<U> cast() const {
        return ModelT<U>{graph, params.template cast<U>(), config};
    }
};

using Model = ModelT<float>;

// Receptive field along one axis of the dilated cascade (3^3 kernels).
inline int64_t dilated_receptive_field(const std::vector<int>& dilations) {
    int64_t rf = 1;
    for (int d : dilations) rf += 2 * static_cast<int64_t>(d);
    return rf;
}

namespace detail {

template <typename T>
struct GraphBuilder {
    ModelT<T> model;

    explicit GraphBuilder(const ModelConfig& cfg) {
        model.config = cfg;
        model.graph.nodes.push_back(OpNode{});  // input placeholder
        model.graph.nodes[0].tag = "input";
    }

    int node(OpNode n) {
        model.graph.nodes.push_back(std::move(n));
        return static_cast<int>(model.graph.nodes.size()) - 1;
    }

    int conv(int src, const std::string& name, int64_t cout, int64_t cin, int64_t k,
             int64_t stride, int64_t padding, int64_t dilation) {
        OpNode n;
        n.kind = OpKind::Conv3d;
        n.inputs = {src};
        n.weight = model.params.add(name + ".w", {cout, cin, k, k, k}, cin * k * k * k);
        n.bias = model.params.add(name + ".b", {cout}, 0);
        n.attrs = ConvAttrs{stride, padding, dilation};
        return node(std::move(n));
    }

    int relu_after(int src) {
        OpNode n;
        n.kind = OpKind::Relu;
        n.inputs = {src};
        return node(std::move(n));
    }

    int conv_relu(int src, const std::string& name, int64_t cout, int64_t cin, int64_t k,
                  int64_t stride = 1, int64_t padding = 0, int64_t dilation = 1) {
        return relu_after(conv(src, name, cout, cin, k, stride, padding, dilation));
    }

    int tconv(int src, const std::string& name, int64_t cin, int64_t cout, int64_t k, int64_t stride) {
        OpNode n;
        n.kind = OpKind::TConv3d;
        n.inputs = {src};
        n.weight = model.params.add(name + ".w", {cin, cout, k, k, k}, cin * k * k * k);
        n.attrs = ConvAttrs{stride, 0, 1};
        return node(std::move(n));
    }

    int maxpool(int src, int64_t window) {
        OpNode n;
        n.kind = OpKind::MaxPool3d;
        n.inputs = {src};
        n.window = window;
        return node(std::move(n));
    }

    int concat(int a, int b) {
        OpNode n;
        n.kind = OpKind::Concat;
        n.inputs = {a, b};
        return node(std::move(n));
    }

    int add_nodes(int a, int b) {
        OpNode n;
        n.kind = OpKind::Add;
        n.inputs = {a, b};
        return node(std::move(n));
    }

    int softmax(int src) {
        OpNode n;
        n.kind = OpKind::Softmax;
        n.inputs = {src};
        return node(std::move(n));
    }

    void tag(int id, const std::string& t) { model.graph.nodes[static_cast<size_t>(id)].tag = t; }
};

template <typename T>
ModelT<T> build_unet_common(const ModelConfig& cfg, bool dilated) {
    cfg.validate();
    if (dilated && !cfg.dilated_bottleneck)
        throw std::invalid_argument("build_dilated_unet3d: config must set dilated_bottleneck");

    GraphBuilder<T> b(cfg);
    const int64_t base = cfg.base_channels;
    int cur = 0;
    int64_t cur_ch = cfg.in_channels;
    std::vector<int> skips;
    std::vector<int64_t> skip_ch;

    for (int s = 0; s < cfg.depth; ++s) {
        const int64_t ch = base << s;
        const std::string stage = "enc" + std::to_string(s);
        cur = b.conv_relu(cur, stage + ".conv1", ch, cur_ch, 3, 1, 1, 1);
        cur = b.conv_relu(cur, stage + ".conv2", ch, ch, 3, 1, 1, 1);
        b.tag(cur, stage + ".out");
        skips.push_back(cur);
        skip_ch.push_back(ch);
        if (cfg.downsample_mode == Downsample::MaxPool) {
            cur = b.maxpool(cur, 2);
        } else {
            cur = b.conv_relu(cur, "down" + std::to_string(s), ch, ch, 2, 2, 0, 1);
        }
        cur_ch = ch;
    }

    const int64_t chb = base << cfg.depth;
    if (!dilated) {
        cur = b.conv_relu(cur, "bottleneck.conv1", chb, cur_ch, 3, 1, 1, 1);
        cur = b.conv_relu(cur, "bottleneck.conv2", chb, chb, 3, 1, 1, 1);
    } else {
        int sum = -1;
        int64_t cin = cur_ch;
        for (size_t i = 0; i < cfg.bottleneck_dilations.size(); ++i) {
            const int64_t d = cfg.bottleneck_dilations[i];
            cur = b.conv_relu(cur, "bottleneck.dil" + std::to_string(i), chb, cin, 3, 1, d, d);
            sum = sum < 0 ? cur : b.add_nodes(sum, cur);
            cin = chb;
        }
        cur = sum;
    }
    b.tag(cur, "bottleneck.out");
    cur_ch = chb;

    for (int s = cfg.depth - 1; s >= 0; --s) {
        const int64_t ch = skip_ch[static_cast<size_t>(s)];
        const std::string stage = "dec" + std::to_string(s);
        cur = b.tconv(cur, "up" + std::to_string(s), cur_ch, ch, 2, 2);
        b.tag(cur, "up" + std::to_string(s) + ".out");
        cur = b.concat(skips[static_cast<size_t>(s)], cur);
        cur = b.conv_relu(cur, stage + ".conv1", ch, 2 * ch, 3, 1, 1, 1);
        cur = b.conv_relu(cur, stage + ".conv2", ch, ch, 3, 1, 1, 1);
        b.tag(cur, stage + ".out");
        cur_ch = ch;
    }

    cur = b.conv(cur, "head", cfg.out_classes, cur_ch, 1, 1, 0, 1);
    b.tag(cur, "logits");
    cur = b.softmax(cur);
    b.tag(cur, "probs");
    b.model.graph.output = cur;
    return std::move(b.model);
}

}  // namespace detail

template <typename T = float>
ModelT<T> build_unet3d(const ModelConfig& cfg) {
    return detail::build_unet_common<T>(cfg, false);
}

template <typename T = float>
ModelT<T> build_dilated_unet3d(const ModelConfig& cfg) {
    return detail::build_unet_common<T>(cfg, true);
}

template <typename T = float>
ModelT<T> build_model(const ModelConfig& cfg) {
    return cfg.dilated_bottleneck ? build_dilated_unet3d<T>(cfg) : build_unet3d<T>(cfg);
}

// Zero-mean normal with variance 2/fan_in.
template <typename T>
void he_fill(TensorT<T>& t, int64_t fan_in, Rng& rng) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rng.gaussian() * std_dev);
}

// Conv weights get He-normal values, biases stay zero; fully determined by
// the seed and the parameter build order.
template <typename T>
void init_params(ModelT<T>& model, uint64_t seed) {
    Rng rng(seed);
    for (size_t i = 0; i < model.params.tensors.size(); ++i) {
        if (model.params.fan_in[i] > 0) {
            he_fill(model.params.tensors[i], model.params.fan_in[i], rng);
        } else {
            std::fill(model.params.tensors[i].data.begin(), model.params.tensors[i].data.end(), T(0));
        }
    }
}

namespace detail {

template <typename T>
void check_forward_input(const ModelT<T>& m, const TensorT<T>& batch) {
    if (batch.rank() != 5)
        throw std::invalid_argument("forward: expected NCDHW batch, got " + shape_string(batch.shape));
    if (batch.dim(1) != m.config.in_channels)
        throw std::invalid_argument("forward: batch has " + std::to_string(batch.dim(1)) +
                                    " channels, model expects " +
                                    std::to_string(m.config.in_channels));
    const int64_t div = int64_t(1) << m.config.depth;
    const char axes[3] = {'D', 'H', 'W'};
    for (int i = 0; i < 3; ++i) {
        const int64_t ext = batch.dim(2 + i);
        if (ext % div != 0) {
            const int64_t padded = (ext / div + 1) * div;
            throw std::invalid_argument(std::string("forward: spatial axis ") + axes[i] +
                                        " extent " + std::to_string(ext) +
                                        " not divisible by " + std::to_string(div) +
                                        "; pad to " + std::to_string(padded));
        }
    }
    if (m.config.dilated_bottleneck) {
        const int64_t rf = dilated_receptive_field(m.config.bottleneck_dilations);
        const int64_t ext = std::min({batch.dim(2), batch.dim(3), batch.dim(4)}) / div;
        if (ext < rf)
            throw std::invalid_argument(
                "forward: dilated bottleneck receptive field " + std::to_string(rf) +
                " exceeds bottleneck extent " + std::to_string(ext) +
                "; minimum input extent is " + std::to_string(rf * div));
    }
}

}  // namespace detail

template <typename T>
std::pair<SoftmaxFieldT<T>, ForwardTraceT<T>> forward_traced(const ModelT<T>& m,
                                                             const TensorT<T>& batch) {
    detail::check_forward_input(m, batch);
    ForwardTraceT<T> trace = graph_forward(m.graph, m.params, batch);
    SoftmaxFieldT<T> field = make_softmax_field(TensorT<T>(graph_output(m.graph, trace)));
    return {std::move(field), std::move(trace)};
}

template <typename T>
SoftmaxFieldT<T> forward(const ModelT<T>& m, const TensorT<T>& batch) {
    detail::check_forward_input(m, batch);
    ForwardTraceT<T> trace = graph_forward(m.graph, m.params, batch);
    return make_softmax_field(std::move(trace.values[static_cast<size_t>(m.graph.output)]));
}

}  // namespace voxseg
