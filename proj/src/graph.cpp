#include "zipit/graph.hpp"

#include <algorithm>
#include <array>
#include <functional>
#include <set>

#include "zipit/error.hpp"

namespace zipit {

namespace {

constexpr std::array<std::pair<LayerKind, std::string_view>, 10> kKindNames{{
    {LayerKind::Input, "Input"},
    {LayerKind::Linear, "Linear"},
    {LayerKind::Conv2d, "Conv2d"},
    {LayerKind::BatchNorm, "BatchNorm"},
    {LayerKind::LayerNorm, "LayerNorm"},
    {LayerKind::ReLU, "ReLU"},
    {LayerKind::AvgPool, "AvgPool"},
    {LayerKind::MaxPool, "MaxPool"},
    {LayerKind::Add, "Add"},
    {LayerKind::Head, "Head"},
}};

std::string where(const LayerNode& n) {
    return "node '" + n.id + "' (" + std::string(kind_name(n.kind)) + ")";
}

void expect_param(const LayerNode& n, const char* name, size_t rank) {
    auto it = n.params.find(name);
    if (it == n.params.end()) throw ShapeError(where(n) + ": missing parameter '" + name + "'");
    if (it->second.rank() != rank)
        throw ShapeError(where(n) + ": parameter '" + name + "' has shape " + shape_str(it->second.shape()));
}

void expect_vector_len(const LayerNode& n, const char* name, int64_t len) {
    expect_param(n, name, 1);
    if (n.param(name).dim(0) != len)
        throw ShapeError(where(n) + ": parameter '" + name + "' has length " + std::to_string(n.param(name).dim(0)) +
                         ", expected " + std::to_string(len));
}

void check_params(const LayerNode& n) {
    std::set<std::string> allowed;
    switch (n.kind) {
    case LayerKind::Linear:
    case LayerKind::Head:
        expect_param(n, "weight", 2);
        expect_vector_len(n, "bias", n.param("weight").dim(0));
        allowed = {"weight", "bias"};
        break;
    case LayerKind::Conv2d: {
        expect_param(n, "weight", 4);
        const auto& w = n.param("weight");
        if (w.dim(2) != w.dim(3)) throw ShapeError(where(n) + ": kernel must be square, got " + shape_str(w.shape()));
        expect_vector_len(n, "bias", w.dim(0));
        allowed = {"weight", "bias"};
        break;
    }
    case LayerKind::BatchNorm: {
        expect_param(n, "weight", 1);
        const int64_t c = n.param("weight").dim(0);
        for (const char* p : {"bias", "running_mean", "running_var"}) expect_vector_len(n, p, c);
        for (float v : n.param("running_var").data())
            if (!(v > 0.0f)) throw ShapeError(where(n) + ": running_var must be strictly positive");
        allowed = {"weight", "bias", "running_mean", "running_var"};
        break;
    }
    case LayerKind::LayerNorm:
        expect_param(n, "weight", 1);
        expect_vector_len(n, "bias", n.param("weight").dim(0));
        allowed = {"weight", "bias"};
        break;
    default:
        break;
    }
    for (const auto& [name, _] : n.params)
        if (!allowed.count(name)) throw ShapeError(where(n) + ": unexpected parameter '" + name + "'");
}

}  // namespace

std::string_view kind_name(LayerKind kind) {
    for (const auto& [k, name] : kKindNames)
        if (k == kind) return name;
    return "?";
}

LayerKind kind_from_name(std::string_view name) {
    for (const auto& [k, n] : kKindNames)
        if (n == name) return k;
    throw ShapeError("unknown layer kind '" + std::string(name) + "'");
}

const Tensor& LayerNode::param(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("node '" + id + "' has no parameter '" + name + "'");
    return it->second;
}

Tensor& LayerNode::param(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw ShapeError("node '" + id + "' has no parameter '" + name + "'");
    return it->second;
}

double LayerNode::attr(const std::string& name, double fallback) const {
    auto it = attrs.find(name);
    return it == attrs.end() ? fallback : it->second;
}

int64_t LayerNode::int_attr(const std::string& name, int64_t fallback) const {
    return static_cast<int64_t>(attr(name, static_cast<double>(fallback)));
}

LayerNode& ModelGraph::add(LayerNode node) {
    std::string id = node.id;
    auto [it, inserted] = nodes.emplace(id, std::move(node));
    if (!inserted) throw TopologyError("duplicate node id '" + id + "'");
    return it->second;
}

const LayerNode& ModelGraph::node(const std::string& id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw TopologyError("no node '" + id + "'");
    return it->second;
}

LayerNode& ModelGraph::node(const std::string& id) {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw TopologyError("no node '" + id + "'");
    return it->second;
}

const LayerNode& ModelGraph::input() const {
    const LayerNode* found = nullptr;
    for (const auto& [_, n] : nodes) {
        if (n.kind != LayerKind::Input) continue;
        if (found) throw TopologyError("graph has more than one Input node");
        found = &n;
    }
    if (!found) throw TopologyError("graph has no Input node");
    return *found;
}

std::vector<std::string> ModelGraph::topo_order() const {
    std::map<std::string, int> level;
    std::set<std::string> on_stack;
    std::function<int(const std::string&)> depth = [&](const std::string& id) -> int {
        if (auto it = level.find(id); it != level.end()) return it->second;
        if (on_stack.count(id)) throw TopologyError("cycle through node '" + id + "'");
        auto nit = nodes.find(id);
        if (nit == nodes.end()) throw TopologyError("reference to missing node '" + id + "'");
        on_stack.insert(id);
        int d = 0;
        for (const auto& in : nit->second.inputs) d = std::max(d, depth(in) + 1);
        on_stack.erase(id);
        level[id] = d;
        return d;
    };
    std::vector<std::pair<int, std::string>> keyed;
    keyed.reserve(nodes.size());
    for (const auto& [id, _] : nodes) keyed.emplace_back(depth(id), id);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::string> order;
    order.reserve(keyed.size());
    for (auto& [_, id] : keyed) order.push_back(std::move(id));
    return order;
}

std::map<std::string, std::vector<std::string>> ModelGraph::consumers() const {
    std::map<std::string, std::vector<std::string>> out;
    for (const auto& id : topo_order()) {
        out[id];
        for (const auto& in : node(id).inputs) out[in].push_back(id);
    }
    return out;
}

void ModelGraph::validate() const {
    const LayerNode& in = input();
    for (const auto& [id, n] : nodes) {
        if (n.id != id) throw TopologyError("node key '" + id + "' does not match its id '" + n.id + "'");
        const size_t arity = n.inputs.size();
        if (n.kind == LayerKind::Input && arity != 0) throw TopologyError(where(n) + ": Input takes no inputs");
        if (n.kind == LayerKind::Add && arity < 2) throw TopologyError(where(n) + ": Add needs at least two inputs");
        if (n.kind != LayerKind::Input && n.kind != LayerKind::Add && arity != 1)
            throw TopologyError(where(n) + ": expects exactly one input");
        for (const auto& src : n.inputs)
            if (!contains(src)) throw TopologyError(where(n) + ": input '" + src + "' does not exist");
        check_params(n);
    }
    if (heads.empty()) throw TopologyError("graph declares no heads");
    for (const auto& h : heads) {
        if (!contains(h)) throw TopologyError("head '" + h + "' does not exist");
        if (node(h).kind != LayerKind::Head) throw TopologyError("head '" + h + "' is not a Head node");
    }
    for (const auto& [id, n] : nodes)
        if (n.kind == LayerKind::Head && std::find(heads.begin(), heads.end(), id) == heads.end())
            throw TopologyError("Head node '" + id + "' is not listed in heads");

    const auto order = topo_order();  // throws on cycles
    const auto cons = consumers();

    std::set<std::string> reached{in.id};
    for (const auto& id : order)
        for (const auto& c : cons.at(id))
            if (reached.count(id)) reached.insert(c);
    std::set<std::string> useful(heads.begin(), heads.end());
    for (auto it = order.rbegin(); it != order.rend(); ++it)
        if (useful.count(*it))
            for (const auto& src : node(*it).inputs) useful.insert(src);
    for (const auto& [id, _] : nodes) {
        if (!reached.count(id)) throw TopologyError("node '" + id + "' is not reachable from the input");
        if (!useful.count(id)) throw TopologyError("node '" + id + "' does not reach any head");
    }
    infer_shapes(*this);
}

std::map<std::string, Shape> infer_shapes(const ModelGraph& g) {
    std::map<std::string, Shape> shapes;
    for (const auto& id : g.topo_order()) {
        const LayerNode& n = g.node(id);
        auto in_shape = [&](size_t i) -> const Shape& { return shapes.at(n.inputs.at(i)); };
        Shape out;
        switch (n.kind) {
        case LayerKind::Input:
            if (n.attrs.count("dim"))
                out = {n.int_attr("dim", 0)};
            else
                out = {n.int_attr("channels", 0), n.int_attr("height", 0), n.int_attr("width", 0)};
            for (auto d : out)
                if (d <= 0) throw ShapeError(where(n) + ": input dimensions must be positive");
            break;
        case LayerKind::Linear:
        case LayerKind::Head: {
            const auto& w = n.param("weight");
            const auto& s = in_shape(0);
            if (s.size() != 1 || s[0] != w.dim(1))
                throw ShapeError(where(n) + ": expects input [" + std::to_string(w.dim(1)) + "], got " + shape_str(s));
            out = {w.dim(0)};
            break;
        }
        case LayerKind::Conv2d: {
            const auto& w = n.param("weight");
            const auto& s = in_shape(0);
            if (s.size() != 3 || s[0] != w.dim(1))
                throw ShapeError(where(n) + ": expects " + std::to_string(w.dim(1)) + " input channels, got " +
                                 shape_str(s));
            const int64_t k = w.dim(2), st = n.int_attr("stride", 1), pad = n.int_attr("padding", 0);
            if (st < 1 || pad < 0) throw ShapeError(where(n) + ": bad stride/padding");
            const int64_t ho = (s[1] + 2 * pad - k) / st + 1, wo = (s[2] + 2 * pad - k) / st + 1;
            if (s[1] + 2 * pad < k || s[2] + 2 * pad < k || ho < 1 || wo < 1)
                throw ShapeError(where(n) + ": kernel larger than padded input " + shape_str(s));
            out = {w.dim(0), ho, wo};
            break;
        }
        case LayerKind::BatchNorm:
        case LayerKind::LayerNorm: {
            const auto& s = in_shape(0);
            if ((s.size() != 1 && s.size() != 3) || s[0] != n.param("weight").dim(0))
                throw ShapeError(where(n) + ": parameter width " + std::to_string(n.param("weight").dim(0)) +
                                 " does not match input " + shape_str(s));
            out = s;
            break;
        }
        case LayerKind::ReLU:
            out = in_shape(0);
            break;
        case LayerKind::AvgPool:
        case LayerKind::MaxPool: {
            const auto& s = in_shape(0);
            if (s.size() != 3) throw ShapeError(where(n) + ": pooling needs a [C,H,W] input, got " + shape_str(s));
            const int64_t k = n.int_attr("kernel", 0);
            if (k == 0) {
                out = {s[0]};
                break;
            }
            const int64_t st = n.int_attr("stride", k);
            if (k < 0 || st < 1 || k > s[1] || k > s[2]) throw ShapeError(where(n) + ": bad pooling window");
            out = {s[0], (s[1] - k) / st + 1, (s[2] - k) / st + 1};
            break;
        }
        case LayerKind::Add:
            out = in_shape(0);
            for (size_t i = 1; i < n.inputs.size(); ++i)
                if (in_shape(i) != out)
                    throw ShapeError(where(n) + ": operand shapes differ " + shape_str(out) + " vs " +
                                     shape_str(in_shape(i)));
            break;
        }
        shapes[id] = out;
    }
    return shapes;
}

int64_t feature_width(const ModelGraph& g, const std::string& id) {
    return infer_shapes(g).at(id).at(0);
}

int64_t count_flops(const ModelGraph& g) {
    const auto shapes = infer_shapes(g);
    int64_t total = 0;
    for (const auto& [id, n] : g.nodes) {
        if (n.kind == LayerKind::Linear || n.kind == LayerKind::Head) {
            const auto& w = n.param("weight");
            total += w.dim(0) * w.dim(1);
        } else if (n.kind == LayerKind::Conv2d) {
            const auto& w = n.param("weight");
            const auto& s = shapes.at(id);
            total += w.dim(0) * w.dim(1) * w.dim(2) * w.dim(3) * s[1] * s[2];
        }
    }
    return total;
}

std::optional<std::string> topology_difference(const ModelGraph& a, const ModelGraph& b) {
    if (a.nodes.size() != b.nodes.size())
        return "node counts differ (" + std::to_string(a.nodes.size()) + " vs " + std::to_string(b.nodes.size()) + ")";
    if (a.heads != b.heads) return std::string("head lists differ");
    for (const auto& [id, na] : a.nodes) {
        auto it = b.nodes.find(id);
        if (it == b.nodes.end()) return "node '" + id + "' missing from second model";
        const LayerNode& nb = it->second;
        if (na.kind != nb.kind) return "node '" + id + "' kinds differ";
        if (na.inputs != nb.inputs) return "node '" + id + "' inputs differ";
        if (na.attrs != nb.attrs) return "node '" + id + "' attributes differ";
        if (na.params.size() != nb.params.size()) return "node '" + id + "' parameter sets differ";
        for (const auto& [pname, pa] : na.params) {
            auto pit = nb.params.find(pname);
            if (pit == nb.params.end()) return "node '" + id + "' lacks parameter '" + pname + "' in second model";
            if (pit->second.shape() != pa.shape())
                return "node '" + id + "' parameter '" + pname + "' shapes differ " + shape_str(pa.shape()) + " vs " +
                       shape_str(pit->second.shape());
        }
    }
    return std::nullopt;
}

}  // namespace zipit
