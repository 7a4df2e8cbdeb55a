#include "zipit/forward.hpp"

#include <set>

#include "kernels.hpp"
#include "zipit/error.hpp"

namespace zipit {

namespace {

std::set<std::string> ancestors(const ModelGraph& g, const std::string& head) {
    std::set<std::string> keep;
    std::vector<std::string> stack{head};
    while (!stack.empty()) {
        auto id = stack.back();
        stack.pop_back();
        if (!keep.insert(id).second) continue;
        for (const auto& in : g.node(id).inputs) stack.push_back(in);
    }
    return keep;
}

std::string label(const LayerNode& n) {
    return "node '" + n.id + "' (" + std::string(kind_name(n.kind)) + ")";
}

void check_batch(const LayerNode& in, const Tensor& batch) {
    Shape expect{0};
    if (in.attrs.count("dim"))
        expect = {in.int_attr("dim", 0)};
    else
        expect = {in.int_attr("channels", 0), in.int_attr("height", 0), in.int_attr("width", 0)};
    Shape got(batch.shape().begin() + (batch.rank() ? 1 : 0), batch.shape().end());
    if (batch.rank() != expect.size() + 1 || got != expect)
        throw ShapeError(label(in) + ": batch shape " + shape_str(batch.shape()) + " does not match input " +
                         shape_str(expect));
}

Tensor eval_node(const LayerNode& n, const std::vector<const Tensor*>& xs, NormStats stats) {
    auto need_rank = [&](const Tensor& x, std::initializer_list<size_t> ranks) {
        for (auto r : ranks)
            if (x.rank() == r) return;
        throw ShapeError(label(n) + ": unexpected input shape " + shape_str(x.shape()));
    };
    switch (n.kind) {
    case LayerKind::Input:
        return *xs.at(0);
    case LayerKind::Linear:
    case LayerKind::Head: {
        const Tensor& x = *xs[0];
        const Tensor& w = n.param("weight");
        if (x.rank() != 2 || x.dim(1) != w.dim(1))
            throw ShapeError(label(n) + ": expects [N," + std::to_string(w.dim(1)) + "] input, got " +
                             shape_str(x.shape()));
        return kernels::linear_forward(x, w, n.param("bias"));
    }
    case LayerKind::Conv2d: {
        const Tensor& x = *xs[0];
        const Tensor& w = n.param("weight");
        if (x.rank() != 4 || x.dim(1) != w.dim(1))
            throw ShapeError(label(n) + ": expects " + std::to_string(w.dim(1)) + " input channels, got " +
                             shape_str(x.shape()));
        return kernels::conv_forward(x, w, n.param("bias"), n.int_attr("stride", 1), n.int_attr("padding", 0));
    }
    case LayerKind::BatchNorm: {
        const Tensor& x = *xs[0];
        need_rank(x, {2, 4});
        if (x.dim(1) != n.param("weight").dim(0)) throw ShapeError(label(n) + ": channel mismatch");
        const double eps = n.attr("eps", kDefaultNormEpsilon);
        std::vector<double> mean, var;
        if (stats == NormStats::Batch) {
            kernels::channel_moments(x, mean, var);
        } else {
            const auto& rm = n.param("running_mean");
            const auto& rv = n.param("running_var");
            mean.assign(rm.data().begin(), rm.data().end());
            var.assign(rv.data().begin(), rv.data().end());
        }
        return kernels::batchnorm_forward(x, n.param("weight"), n.param("bias"), mean, var, eps, nullptr);
    }
    case LayerKind::LayerNorm: {
        const Tensor& x = *xs[0];
        need_rank(x, {2, 4});
        if (x.dim(1) != n.param("weight").dim(0)) throw ShapeError(label(n) + ": channel mismatch");
        return kernels::layernorm_forward(x, n.param("weight"), n.param("bias"), n.attr("eps", kDefaultNormEpsilon),
                                          nullptr);
    }
    case LayerKind::ReLU:
        return kernels::relu_forward(*xs[0]);
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: {
        const Tensor& x = *xs[0];
        need_rank(x, {4});
        const int64_t k = n.int_attr("kernel", 0);
        const int64_t s = n.int_attr("stride", k);
        return n.kind == LayerKind::AvgPool ? kernels::avgpool_forward(x, k, s) : kernels::maxpool_forward(x, k, s);
    }
    case LayerKind::Add: {
        Tensor y = *xs[0];
        for (size_t i = 1; i < xs.size(); ++i) {
            if (xs[i]->shape() != y.shape())
                throw ShapeError(label(n) + ": operand shapes differ " + shape_str(y.shape()) + " vs " +
                                 shape_str(xs[i]->shape()));
            for (size_t j = 0; j < y.size(); ++j) y[j] += (*xs[i])[j];
        }
        return y;
    }
    }
    throw ShapeError(label(n) + ": unsupported kind");
}

}  // namespace

Activations forward(const ModelGraph& model, const Tensor& batch, const ForwardOptions& opts) {
    std::set<std::string> keep;
    if (opts.head) {
        if (!model.contains(*opts.head) || model.node(*opts.head).kind != LayerKind::Head)
            throw TopologyError("unknown head '" + *opts.head + "'");
        keep = ancestors(model, *opts.head);
    }
    Activations acts;
    for (const auto& id : model.topo_order()) {
        if (opts.head && !keep.count(id)) continue;
        const LayerNode& n = model.node(id);
        std::vector<const Tensor*> xs;
        if (n.kind == LayerKind::Input) {
            check_batch(n, batch);
            xs.push_back(&batch);
        } else {
            for (const auto& in : n.inputs) xs.push_back(&acts.at(in));
        }
        Tensor y = eval_node(n, xs, opts.norm_stats);
        if (!all_finite(y)) throw NumericError(label(n) + ": produced non-finite activations");
        acts.emplace(id, std::move(y));
    }
    return acts;
}

std::vector<int64_t> argmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("argmax_rows: expected [N,C], got " + shape_str(logits.shape()));
    std::vector<int64_t> out(static_cast<size_t>(logits.dim(0)));
    for (int64_t r = 0; r < logits.dim(0); ++r) {
        int64_t best = 0;
        for (int64_t c = 1; c < logits.dim(1); ++c)
            if (logits.at(r, c) > logits.at(r, best)) best = c;
        out[r] = best;
    }
    return out;
}

}  // namespace zipit
