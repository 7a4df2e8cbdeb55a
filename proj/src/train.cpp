#include "zipit/train.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "kernels.hpp"
#include "zipit/error.hpp"
#include "zipit/forward.hpp"
#include "zipit/rng.hpp"

namespace zipit {

namespace {

constexpr double kBnMomentum = 0.1;

uint64_t fnv1a(const std::string& s) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ull;
    return h;
}

std::vector<int64_t> parse_widths(const std::string& text) {
    std::vector<int64_t> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        try {
            size_t used = 0;
            const long long v = std::stoll(tok, &used);
            if (used != tok.size() || v <= 0) throw std::invalid_argument(tok);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError("bad layer width '" + tok + "'");
        }
    }
    if (out.empty()) throw ConfigError("architecture needs at least one width");
    return out;
}

LayerNode make(std::string id, LayerKind kind, std::vector<std::string> inputs) {
    LayerNode n;
    n.id = std::move(id);
    n.kind = kind;
    n.inputs = std::move(inputs);
    return n;
}

LayerNode linear(std::string id, LayerKind kind, const std::string& in, int64_t fan_in, int64_t out) {
    LayerNode n = make(std::move(id), kind, {in});
    n.params["weight"] = Tensor({out, fan_in});
    n.params["bias"] = Tensor({out});
    return n;
}

LayerNode conv(std::string id, const std::string& in, int64_t cin, int64_t cout, int64_t k, int64_t pad) {
    LayerNode n = make(std::move(id), LayerKind::Conv2d, {in});
    n.params["weight"] = Tensor({cout, cin, k, k});
    n.params["bias"] = Tensor({cout});
    n.attrs = {{"stride", 1.0}, {"padding", static_cast<double>(pad)}};
    return n;
}

LayerNode batchnorm(std::string id, const std::string& in, int64_t c) {
    LayerNode n = make(std::move(id), LayerKind::BatchNorm, {in});
    n.params["weight"] = Tensor({c}, 1.0f);
    n.params["bias"] = Tensor({c});
    n.params["running_mean"] = Tensor({c});
    n.params["running_var"] = Tensor({c}, 1.0f);
    n.attrs = {{"eps", kDefaultNormEpsilon}};
    return n;
}

using Grads = std::map<std::string, std::map<std::string, Tensor>>;

struct Tape {
    Activations out;
    std::map<std::string, kernels::NormCache> norm;
};

void forward_train(ModelGraph& g, const std::vector<std::string>& order, const Tensor& x, Tape& tape) {
    tape.out.clear();
    tape.norm.clear();
    for (const auto& id : order) {
        LayerNode& n = g.node(id);
        auto in = [&](size_t i) -> const Tensor& { return tape.out.at(n.inputs.at(i)); };
        Tensor y;
        switch (n.kind) {
        case LayerKind::Input: y = x; break;
        case LayerKind::Linear:
        case LayerKind::Head: y = kernels::linear_forward(in(0), n.param("weight"), n.param("bias")); break;
        case LayerKind::Conv2d:
            y = kernels::conv_forward(in(0), n.param("weight"), n.param("bias"), n.int_attr("stride", 1),
                                      n.int_attr("padding", 0));
            break;
        case LayerKind::BatchNorm: {
            std::vector<double> mean, var;
            kernels::channel_moments(in(0), mean, var);
            y = kernels::batchnorm_forward(in(0), n.param("weight"), n.param("bias"), mean, var,
                                           n.attr("eps", kDefaultNormEpsilon), &tape.norm[id]);
            auto& rm = n.param("running_mean");
            auto& rv = n.param("running_var");
            for (size_t c = 0; c < mean.size(); ++c) {
                rm[c] = static_cast<float>((1 - kBnMomentum) * rm[c] + kBnMomentum * mean[c]);
                rv[c] = static_cast<float>(std::max((1 - kBnMomentum) * rv[c] + kBnMomentum * var[c], 1e-12));
            }
            break;
        }
        case LayerKind::LayerNorm:
            y = kernels::layernorm_forward(in(0), n.param("weight"), n.param("bias"), n.attr("eps", kDefaultNormEpsilon),
                                           &tape.norm[id]);
            break;
        case LayerKind::ReLU: y = kernels::relu_forward(in(0)); break;
        case LayerKind::AvgPool: {
            const int64_t k = n.int_attr("kernel", 0);
            y = kernels::avgpool_forward(in(0), k, n.int_attr("stride", k));
            break;
        }
        case LayerKind::MaxPool: {
            const int64_t k = n.int_attr("kernel", 0);
            y = kernels::maxpool_forward(in(0), k, n.int_attr("stride", k));
            break;
        }
        case LayerKind::Add:
            y = in(0);
            for (size_t i = 1; i < n.inputs.size(); ++i) y = add(y, in(i));
            break;
        }
        tape.out.emplace(id, std::move(y));
    }
}

void accumulate(std::map<std::string, Tensor>& d, const std::string& id, const Tensor& g) {
    auto it = d.find(id);
    if (it == d.end())
        d.emplace(id, g);
    else
        for (size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
}

void backward(const ModelGraph& g, const std::vector<std::string>& order, const Tape& tape, const std::string& head,
              const Tensor& dlogits, Grads& grads) {
    std::map<std::string, Tensor> dout;
    dout.emplace(head, dlogits);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        const LayerNode& n = g.node(*it);
        auto dit = dout.find(n.id);
        if (dit == dout.end() || n.kind == LayerKind::Input) continue;
        const Tensor& dy = dit->second;
        auto& pg = grads[n.id];
        auto pgrad = [&](const char* name) -> Tensor* {
            auto [pit, _] = pg.try_emplace(name, n.param(name).shape());
            return &pit->second;
        };
        const Tensor& x0 = tape.out.at(n.inputs.at(0));
        switch (n.kind) {
        case LayerKind::Linear:
        case LayerKind::Head:
            accumulate(dout, n.inputs[0], kernels::linear_backward(x0, n.param("weight"), dy, pgrad("weight"), pgrad("bias")));
            break;
        case LayerKind::Conv2d:
            accumulate(dout, n.inputs[0],
                       kernels::conv_backward(x0, n.param("weight"), dy, n.int_attr("stride", 1), n.int_attr("padding", 0),
                                              pgrad("weight"), pgrad("bias")));
            break;
        case LayerKind::BatchNorm:
            accumulate(dout, n.inputs[0],
                       kernels::batchnorm_backward(dy, n.param("weight"), tape.norm.at(n.id), pgrad("weight"), pgrad("bias")));
            break;
        case LayerKind::LayerNorm:
            accumulate(dout, n.inputs[0],
                       kernels::layernorm_backward(dy, n.param("weight"), tape.norm.at(n.id), pgrad("weight"), pgrad("bias")));
            break;
        case LayerKind::ReLU: accumulate(dout, n.inputs[0], kernels::relu_backward(tape.out.at(n.id), dy)); break;
        case LayerKind::AvgPool: {
            const int64_t k = n.int_attr("kernel", 0);
            accumulate(dout, n.inputs[0], kernels::avgpool_backward(x0.shape(), dy, k, n.int_attr("stride", k)));
            break;
        }
        case LayerKind::MaxPool: {
            const int64_t k = n.int_attr("kernel", 0);
            accumulate(dout, n.inputs[0], kernels::maxpool_backward(x0, dy, k, n.int_attr("stride", k)));
            break;
        }
        case LayerKind::Add:
            for (const auto& src : n.inputs) accumulate(dout, src, dy);
            break;
        case LayerKind::Input: break;
        }
        dout.erase(n.id);
    }
}

// Mean cross-entropy and the gradient with respect to the logits.
double softmax_xent(const Tensor& logits, std::span<const int32_t> labels, Tensor& dlogits, int64_t& correct) {
    const int64_t n = logits.dim(0), c = logits.dim(1);
    dlogits = Tensor(logits.shape());
    double loss = 0.0;
    for (int64_t r = 0; r < n; ++r) {
        double mx = logits.at(r, 0);
        int64_t arg = 0;
        for (int64_t j = 1; j < c; ++j)
            if (logits.at(r, j) > mx) {
                mx = logits.at(r, j);
                arg = j;
            }
        double z = 0.0;
        for (int64_t j = 0; j < c; ++j) z += std::exp(logits.at(r, j) - mx);
        const int32_t t = labels[static_cast<size_t>(r)];
        loss += -(logits.at(r, t) - mx - std::log(z));
        if (arg == t) ++correct;
        for (int64_t j = 0; j < c; ++j) {
            const double p = std::exp(logits.at(r, j) - mx) / z;
            dlogits.at(r, j) = static_cast<float>((p - (j == t ? 1.0 : 0.0)) / static_cast<double>(n));
        }
    }
    return loss / static_cast<double>(n);
}

Tensor gather_rows(const Tensor& x, std::span<const int64_t> rows) {
    Shape s = x.shape();
    const int64_t dim = shape_numel(s) / s[0];
    s[0] = static_cast<int64_t>(rows.size());
    Tensor out(s);
    for (size_t i = 0; i < rows.size(); ++i)
        std::copy(x.raw() + rows[i] * dim, x.raw() + (rows[i] + 1) * dim, out.raw() + static_cast<int64_t>(i) * dim);
    return out;
}

}  // namespace

Arch Arch::parse(const std::string& text) {
    Arch a;
    const auto colon = text.find(':');
    const std::string kind = text.substr(0, colon);
    if (colon == std::string::npos) throw ConfigError("architecture '" + text + "' must look like mlp:64,64");
    std::string rest = text.substr(colon + 1);
    if (kind == "mlp") {
        a.kind = Kind::Mlp;
    } else if (kind == "conv") {
        a.kind = Kind::Conv;
        const auto c2 = rest.find(':');
        if (c2 != std::string::npos) {
            if (rest.substr(c2 + 1) != "skip") throw ConfigError("unknown conv option '" + rest.substr(c2 + 1) + "'");
            a.skip = true;
            rest = rest.substr(0, c2);
        }
    } else {
        throw ConfigError("unknown architecture kind '" + kind + "'");
    }
    a.widths = parse_widths(rest);
    return a;
}

std::string Arch::str() const {
    std::string s = kind == Kind::Mlp ? "mlp:" : "conv:";
    for (size_t i = 0; i < widths.size(); ++i) s += (i ? "," : "") + std::to_string(widths[i]);
    if (skip) s += ":skip";
    return s;
}

void TrainConfig::validate() const {
    if (!(lr > 0.0)) throw ConfigError("lr must be positive");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must be in [0,1)");
    if (arch.widths.empty()) throw ConfigError("architecture has no layers");
}

ModelGraph build_model(const Arch& arch, const Shape& sample_shape, int64_t n_classes) {
    ModelGraph g;
    LayerNode in = make("input", LayerKind::Input, {});
    if (arch.kind == Arch::Kind::Mlp) {
        if (sample_shape.size() != 1) throw ConfigError("mlp expects flat inputs");
        in.attrs["dim"] = static_cast<double>(sample_shape[0]);
        g.add(std::move(in));
        std::string prev = "input";
        int64_t width = sample_shape[0];
        for (size_t i = 0; i < arch.widths.size(); ++i) {
            const std::string k = std::to_string(i + 1);
            g.add(linear("fc" + k, LayerKind::Linear, prev, width, arch.widths[i]));
            g.add(make("relu" + k, LayerKind::ReLU, {"fc" + k}));
            prev = "relu" + k;
            width = arch.widths[i];
        }
        g.add(linear("head", LayerKind::Head, prev, width, n_classes));
    } else {
        if (sample_shape.size() != 3) throw ConfigError("conv expects {C,H,W} inputs");
        if (sample_shape[1] != sample_shape[2]) throw ConfigError("conv expects square images");
        in.attrs = {{"channels", static_cast<double>(sample_shape[0])},
                    {"height", static_cast<double>(sample_shape[1])},
                    {"width", static_cast<double>(sample_shape[2])}};
        g.add(std::move(in));
        std::string prev = "input";
        int64_t ch = sample_shape[0];
        for (size_t i = 0; i < arch.widths.size(); ++i) {
            const std::string s = "s" + std::to_string(i + 1);
            const int64_t w = arch.widths[i];
            g.add(conv(s + "_conv", prev, ch, w, 3, 1));
            g.add(batchnorm(s + "_bn", s + "_conv", w));
            g.add(make(s + "_relu", LayerKind::ReLU, {s + "_bn"}));
            prev = s + "_relu";
            if (arch.skip) {
                const std::string b = s + "_res";
                g.add(conv(b + "_conv1", prev, w, w, 3, 1));
                g.add(batchnorm(b + "_bn1", b + "_conv1", w));
                g.add(make(b + "_relu1", LayerKind::ReLU, {b + "_bn1"}));
                g.add(conv(b + "_conv2", b + "_relu1", w, w, 3, 1));
                g.add(batchnorm(b + "_bn2", b + "_conv2", w));
                g.add(make(b + "_add", LayerKind::Add, {b + "_bn2", prev}));
                g.add(make(b + "_relu2", LayerKind::ReLU, {b + "_add"}));
                prev = b + "_relu2";
            }
            ch = w;
        }
        g.add(conv("proj_conv", prev, ch, ch, sample_shape[1], 0));
        g.add(batchnorm("proj_bn", "proj_conv", ch));
        g.add(make("proj_relu", LayerKind::ReLU, {"proj_bn"}));
        LayerNode pool = make("pool", LayerKind::AvgPool, {"proj_relu"});
        pool.attrs["kernel"] = 0.0;
        g.add(std::move(pool));
        g.add(linear("head", LayerKind::Head, "pool", ch, n_classes));
    }
    g.heads = {"head"};
    g.meta["arch"] = arch.str();
    g.validate();
    return g;
}

void init_params(ModelGraph& g, uint64_t seed) {
    for (const auto& id : g.topo_order()) {
        LayerNode& n = g.node(id);
        Rng rng(Rng::mix({seed, fnv1a(id)}));
        if (is_weighted(n.kind)) {
            auto& w = n.param("weight");
            const int64_t fan_in = static_cast<int64_t>(w.size()) / w.dim(0);
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            for (auto& v : w.data()) v = static_cast<float>(rng.uniform(-bound, bound));
            for (auto& v : n.param("bias").data()) v = static_cast<float>(rng.uniform(-bound, bound));
        } else if (n.kind == LayerKind::BatchNorm || n.kind == LayerKind::LayerNorm) {
            for (auto& v : n.param("weight").data()) v = 1.0f;
            for (auto& v : n.param("bias").data()) v = 0.0f;
            if (n.kind == LayerKind::BatchNorm) {
                for (auto& v : n.param("running_mean").data()) v = 0.0f;
                for (auto& v : n.param("running_var").data()) v = 1.0f;
            }
        }
    }
}

ModelGraph train(const Dataset& data, const TrainConfig& cfg, std::vector<TrainLogRow>* log) {
    cfg.validate();
    if (data.size() == 0) throw ConfigError("training set is empty");
    ModelGraph g = build_model(cfg.arch, data.sample_shape(), data.n_classes());
    init_params(g, cfg.seed);
    g.meta["seed"] = std::to_string(cfg.seed);
    const auto order = g.topo_order();
    const std::string head = g.heads.front();

    Grads velocity;
    Rng rng(Rng::mix({cfg.seed, 0x7368756full}));
    std::vector<int64_t> idx(static_cast<size_t>(data.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Tape tape;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(idx.begin(), idx.end());
        double loss_sum = 0.0;
        int64_t correct = 0;
        for (int64_t start = 0; start < data.size(); start += cfg.batch_size) {
            const int64_t stop = std::min(data.size(), start + cfg.batch_size);
            if (stop - start < 2 && start > 0) break;  // BatchNorm needs two rows
            std::span<const int64_t> rows(idx.data() + start, static_cast<size_t>(stop - start));
            std::vector<int32_t> labels;
            for (auto r : rows) labels.push_back(data.y[static_cast<size_t>(r)]);
            forward_train(g, order, gather_rows(data.x, rows), tape);
            Tensor dlogits;
            const double loss = softmax_xent(tape.out.at(head), labels, dlogits, correct);
            if (!std::isfinite(loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
            loss_sum += loss * static_cast<double>(rows.size());
            Grads grads;
            backward(g, order, tape, head, dlogits, grads);
            for (auto& [nid, pg] : grads) {
                LayerNode& n = g.node(nid);
                for (auto& [pname, grad] : pg) {
                    Tensor& p = n.param(pname);
                    const bool decay = is_weighted(n.kind) && pname == "weight";
                    auto [vit, _] = velocity[nid].try_emplace(pname, p.shape());
                    Tensor& v = vit->second;
                    for (size_t i = 0; i < p.size(); ++i) {
                        const double gi = grad[i] + (decay ? cfg.weight_decay * p[i] : 0.0);
                        v[i] = static_cast<float>(cfg.momentum * v[i] + gi);
                        p[i] = static_cast<float>(p[i] - cfg.lr * v[i]);
                    }
                }
            }
        }
        const double mean_loss = loss_sum / static_cast<double>(data.size());
        if (!std::isfinite(mean_loss)) throw NumericError("training diverged at epoch " + std::to_string(epoch));
        for (const auto& [nid, n] : g.nodes)
            for (const auto& [pname, p] : n.params)
                if (!all_finite(p))
                    throw NumericError("training diverged at epoch " + std::to_string(epoch) + " (node '" + nid + "')");
        if (log) log->push_back({epoch, mean_loss, static_cast<double>(correct) / static_cast<double>(data.size())});
    }
    return g;
}

ModelGraph train(const TaskSpec& spec, const TrainConfig& cfg, std::vector<TrainLogRow>* log) {
    cfg.validate();
    Dataset d = make_dataset(spec);
    ModelGraph g = train(d, cfg, log);
    std::string classes;
    for (size_t i = 0; i < spec.class_subset.size(); ++i) classes += (i ? "," : "") + std::to_string(spec.class_subset[i]);
    g.meta["classes"] = classes;
    return g;
}

ModelGraph interpolate_weights(const ModelGraph& a, const ModelGraph& b, double gamma) {
    if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("interpolation gamma must lie in [0,1]");
    if (auto diff = topology_difference(a, b)) throw TopologyError("cannot interpolate: " + *diff);
    ModelGraph out = a;
    const auto ga = static_cast<float>(gamma), gb = static_cast<float>(1.0 - gamma);
    for (auto& [id, n] : out.nodes) {
        const LayerNode& nb = b.node(id);
        for (auto& [pname, p] : n.params) {
            const Tensor& q = nb.param(pname);
            for (size_t i = 0; i < p.size(); ++i) p[i] = ga * p[i] + gb * q[i];
        }
    }
    return out;
}

double accuracy(const ModelGraph& model, const Dataset& data, const std::string& head) {
    const auto acts = forward(model, data.x, head);
    const auto pred = argmax_rows(acts.at(head));
    int64_t ok = 0;
    for (size_t i = 0; i < pred.size(); ++i) ok += pred[i] == data.y[i];
    return static_cast<double>(ok) / static_cast<double>(pred.size());
}

}  // namespace zipit
