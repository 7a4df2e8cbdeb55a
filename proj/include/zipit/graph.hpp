#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "zipit/tensor.hpp"

namespace zipit {

enum class LayerKind { Input, Linear, Conv2d, BatchNorm, LayerNorm, ReLU, AvgPool, MaxPool, Add, Head };

std::string_view kind_name(LayerKind kind);
LayerKind kind_from_name(std::string_view name);

// Layers with a weight matrix mapping one feature space to another.
inline bool is_weighted(LayerKind k) {
    return k == LayerKind::Linear || k == LayerKind::Conv2d || k == LayerKind::Head;
}

inline constexpr double kDefaultNormEpsilon = 1e-5;

// Attributes by kind:
//   Input      dim | channels,height,width
//   Conv2d     stride (1), padding (0)
//   BatchNorm  eps (1e-5)          LayerNorm eps (1e-5)
//   AvgPool    kernel, stride; kernel 0 pools globally to [N,C]
//   MaxPool    kernel, stride
// Params by kind:
//   Linear/Head  weight [out,in], bias [out]
//   Conv2d       weight [out,in,k,k], bias [out]
//   BatchNorm    weight, bias, running_mean, running_var  (all [C])
//   LayerNorm    weight, bias                              ([C])
struct LayerNode {
    std::string id;
    LayerKind kind = LayerKind::Input;
    std::map<std::string, Tensor> params;
    std::vector<std::string> inputs;
    std::map<std::string, double> attrs;

    const Tensor& param(const std::string& name) const;
    Tensor& param(const std::string& name);
    double attr(const std::string& name, double fallback) const;
    int64_t int_attr(const std::string& name, int64_t fallback) const;

    bool operator==(const LayerNode&) const = default;
};

struct ModelGraph {
    std::map<std::string, LayerNode> nodes;
    std::vector<std::string> heads;
    std::map<std::string, std::string> meta;

    LayerNode& add(LayerNode node);
    const LayerNode& node(const std::string& id) const;
    LayerNode& node(const std::string& id);
    bool contains(const std::string& id) const { return nodes.count(id) != 0; }

    // The unique Input node.
    const LayerNode& input() const;

    // Nodes grouped by longest-path depth from the input, sorted by id within
    // a level. Throws TopologyError on cycles or dangling inputs.
    std::vector<std::string> topo_order() const;

    std::map<std::string, std::vector<std::string>> consumers() const;

    // Checks the structural invariants: arity per kind, parameter shapes,
    // acyclicity, reachability of every node from the input and of some head
    // from every node, positive BatchNorm variances.
    void validate() const;

    bool operator==(const ModelGraph&) const = default;
};

// Per-sample output shape of every node (no batch axis).
std::map<std::string, Shape> infer_shapes(const ModelGraph& g);

// Feature (channel) count produced by a node.
int64_t feature_width(const ModelGraph& g, const std::string& id);

// Multiply-accumulate count of one forward sample.
int64_t count_flops(const ModelGraph& g);

// Empty when the graphs share node ids, kinds, wiring, attrs and parameter
// shapes; otherwise a description of the first difference.
std::optional<std::string> topology_difference(const ModelGraph& a, const ModelGraph& b);

}  // namespace zipit
