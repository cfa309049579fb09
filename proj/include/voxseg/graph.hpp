#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "voxseg/ops.hpp"
#include "voxseg/tensor.hpp"

// A flat op graph: nodes are stored in topological order (every input id is
// smaller than the node's own id), forward caches every node output, backward
// walks the list in exact reverse order and accumulates gradients additively
// wherever a tensor feeds more than one consumer.

namespace voxseg {

enum class OpKind { Input, Conv3d, TConv3d, MaxPool3d, Relu, Softmax, Concat, Add };

struct OpNode {
    OpKind kind = OpKind::Input;
    std::vector<int> inputs;  // node ids, each < own id
    int weight = -1;          // param id, conv/tconv only
    int bias = -1;            // param id, conv only
    ConvAttrs attrs;
    int64_t window = 2;  // maxpool
    std::string tag;     // optional label for tooling and tests
};

struct OpGraph {
    std::vector<OpNode> nodes;  // nodes[0] is the input placeholder
    int output = -1;

    int find_tag(const std::string& tag) const {
        for (size_t i = 0; i < nodes.size(); ++i)
            if (nodes[i].tag == tag) return static_cast<int>(i);
        return -1;
    }
};

template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<TensorT<T>> tensors;
    std::vector<int64_t> fan_in;  // 0 for biases

    int add(const std::string& name, std::vector<int64_t> shape, int64_t fanin) {
        for (const auto& n : names)
            if (n == name) throw std::invalid_argument("duplicate parameter name: " + name);
        names.push_back(name);
        tensors.emplace_back(std::move(shape));
        fan_in.push_back(fanin);
        return static_cast<int>(tensors.size()) - 1;
    }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& t : tensors) n += t.numel();
        return n;
    }

    template <typename U>
    ParamStore<U> cast() const {
        ParamStore<U> out;
        out.names = names;
        out.fan_in = fan_in;
        out.tensors.reserve(tensors.size());
        for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
        return out;
    }
};

template <typename T>
struct ForwardTraceT {
    std::vector<TensorT<T>> values;  // one cached output per node
    bool complete = false;
};

namespace detail {

template <typename T>
void eval_node(const OpGraph& g, const ParamStore<T>& params, ForwardTraceT<T>& trace, size_t id) {
    const OpNode& node = g.nodes[id];
    const auto& in0 = trace.values[static_cast<size_t>(node.inputs.empty() ? 0 : node.inputs[0])];
    switch (node.kind) {
        case OpKind::Input:
            throw std::logic_error("graph: unexpected non-root Input node");
        case OpKind::Conv3d:
            trace.values[id] = conv3d(in0, params.tensors[static_cast<size_t>(node.weight)],
                                      params.tensors[static_cast<size_t>(node.bias)], node.attrs);
            break;
        case OpKind::TConv3d:
            trace.values[id] = transposed_conv3d(
                in0, params.tensors[static_cast<size_t>(node.weight)], node.attrs.stride);
            break;
        case OpKind::MaxPool3d:
            trace.values[id] = maxpool3d(in0, node.window);
            break;
        case OpKind::Relu:
            trace.values[id] = relu(in0);
            break;
        case OpKind::Softmax:
            trace.values[id] = softmax_channels(in0);
            break;
        case OpKind::Concat:
            trace.values[id] =
                concat_channels(in0, trace.values[static_cast<size_t>(node.inputs[1])]);
            break;
        case OpKind::Add:
            trace.values[id] = add(in0, trace.values[static_cast<size_t>(node.inputs[1])]);
            break;
    }
}

template <typename T>
void accum(TensorT<T>& dst, TensorT<T>&& src) {
    if (dst.data.empty()) {
        dst = std::move(src);
        return;
    }
    for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace detail

// Re-evaluates nodes [from, end) against already-cached earlier values.
template <typename T>
void graph_recompute(const OpGraph& g, const ParamStore<T>& params, ForwardTraceT<T>& trace,
                     size_t from) {
    for (size_t id = std::max<size_t>(from, 1); id < g.nodes.size(); ++id)
        detail::eval_node(g, params, trace, id);
    trace.complete = true;
}

template <typename T>
ForwardTraceT<T> graph_forward(const OpGraph& g, const ParamStore<T>& params,
                               const TensorT<T>& input) {
    if (g.nodes.empty() || g.nodes[0].kind != OpKind::Input)
        throw std::logic_error("graph: node 0 must be the input placeholder");
    ForwardTraceT<T> trace;
    trace.values.resize(g.nodes.size());
    trace.values[0] = input;
    graph_recompute(g, params, trace, 1);
    return trace;
}

template <typename T>
const TensorT<T>& graph_output(const OpGraph& g, const ForwardTraceT<T>& trace) {
    return trace.values[static_cast<size_t>(g.output)];
}

// Reverse-mode pass. Returns one gradient tensor per parameter, aligned with
// the ParamStore order. loss_grad is d(scalar loss)/d(value of seed_node);
// seed_node defaults to the graph output. Seeding an interior node lets a
// caller splice in a fused gradient (softmax + cross-entropy) computed in
// logit space.
template <typename T>
std::vector<TensorT<T>> graph_backward(const OpGraph& g, const ParamStore<T>& params,
                                       const ForwardTraceT<T>& trace, const TensorT<T>& loss_grad,
                                       int seed_node = -1) {
    if (!trace.complete || trace.values.size() != g.nodes.size())
        throw std::runtime_error("graph_backward: forward pass not cached for this graph");
    if (seed_node < 0) seed_node = g.output;
    const auto& seed_val = trace.values[static_cast<size_t>(seed_node)];
    if (loss_grad.shape != seed_val.shape)
        throw std::invalid_argument("graph_backward: loss gradient shape " +
                                    shape_string(loss_grad.shape) + " does not match node value " +
                                    shape_string(seed_val.shape));

    std::vector<TensorT<T>> node_grads(g.nodes.size());
    std::vector<TensorT<T>> param_grads(params.tensors.size());
    node_grads[static_cast<size_t>(seed_node)] = loss_grad;

    for (size_t id = static_cast<size_t>(seed_node) + 1; id-- > 1;) {
        TensorT<T>& gout = node_grads[id];
        if (gout.data.empty()) continue;  // no consumer contributed gradient
        const OpNode& node = g.nodes[id];
        const auto& in0 = trace.values[static_cast<size_t>(node.inputs[0])];
        const bool need_in0 = node.inputs[0] != 0;
        switch (node.kind) {
            case OpKind::Input:
                break;
            case OpKind::Conv3d: {
                const auto& w = params.tensors[static_cast<size_t>(node.weight)];
                TensorT<T> gi, gw, gb;
                conv3d_backward(in0, w, node.attrs, gout, need_in0 ? &gi : nullptr, &gw, &gb);
                detail::accum(param_grads[static_cast<size_t>(node.weight)], std::move(gw));
                detail::accum(param_grads[static_cast<size_t>(node.bias)], std::move(gb));
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])], std::move(gi));
                break;
            }
            case OpKind::TConv3d: {
                const auto& w = params.tensors[static_cast<size_t>(node.weight)];
                TensorT<T> gi, gw;
                transposed_conv3d_backward(in0, w, node.attrs.stride, gout,
                                           need_in0 ? &gi : nullptr, &gw);
                detail::accum(param_grads[static_cast<size_t>(node.weight)], std::move(gw));
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])], std::move(gi));
                break;
            }
            case OpKind::MaxPool3d:
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])],
                                  maxpool3d_backward(in0, node.window, gout));
                break;
            case OpKind::Relu:
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])],
                                  relu_backward(in0, gout));
                break;
            case OpKind::Softmax:
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])],
                                  softmax_channels_backward(trace.values[id], gout));
                break;
            case OpKind::Concat: {
                TensorT<T> ga, gb;
                concat_channels_backward(in0.dim(1), gout, ga, gb);
                if (need_in0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[0])], std::move(ga));
                if (node.inputs[1] != 0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[1])], std::move(gb));
                break;
            }
            case OpKind::Add: {
                if (need_in0) detail::accum(node_grads[static_cast<size_t>(node.inputs[0])], TensorT<T>(gout));
                if (node.inputs[1] != 0)
                    detail::accum(node_grads[static_cast<size_t>(node.inputs[1])], TensorT<T>(gout));
                break;
            }
        }
        gout = TensorT<T>();  // free as we go
    }

    // Parameters that never received gradient flow get explicit zeros.
    for (size_t i = 0; i < param_grads.size(); ++i)
        if (param_grads[i].data.empty()) param_grads[i] = TensorT<T>(params.tensors[i].shape);
    return param_grads;
}

}  // namespace voxseg
