#include "zipit/zip.hpp"

#include <algorithm>
#include <map>
#include <numeric>
#include <set>

#include "zipit/error.hpp"
#include "zipit/stats.hpp"

namespace zipit {

namespace {

struct UnionFind {
    std::map<std::string, std::string> parent;
    std::string find(const std::string& x) {
        auto it = parent.find(x);
        if (it == parent.end()) return parent[x] = x;
        if (it->second == x) return x;
        return it->second = find(it->second);
    }
    void join(const std::string& a, const std::string& b) {
        const auto ra = find(a), rb = find(b);
        if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
    }
};

bool is_elementwise(LayerKind k) {
    return k == LayerKind::BatchNorm || k == LayerKind::LayerNorm || k == LayerKind::ReLU ||
           k == LayerKind::AvgPool || k == LayerKind::MaxPool;
}

void check_same_topology(std::span<const ModelGraph> models) {
    if (models.size() < 2) throw ConfigError("zip needs at least 2 models");
    for (size_t h = 1; h < models.size(); ++h)
        if (auto diff = topology_difference(models[0], models[h]))
            throw TopologyError("model " + std::to_string(h) + " differs from model 0: " + *diff);
}

// Sum over h of M^h W^h U^h, accumulated in double and rounded once.
Tensor fused_product(std::span<const Tensor> M, std::span<const Tensor> W, std::span<const Tensor> U) {
    if (M.size() != W.size() || W.size() != U.size() || W.empty()) throw ShapeError("fuse: per-model lists differ in length");
    const int64_t rows = M[0].dim(0), cols = U[0].dim(1);
    std::vector<double> acc(static_cast<size_t>(rows * cols), 0.0);
    for (size_t h = 0; h < W.size(); ++h) {
        const Tensor &m = M[h], &w = W[h], &u = U[h];
        if (m.rank() != 2 || w.rank() != 2 || u.rank() != 2 || m.dim(0) != rows || u.dim(1) != cols ||
            m.dim(1) != w.dim(0) || w.dim(1) != u.dim(0))
            throw ShapeError("fuse: M " + shape_str(m.shape()) + ", W " + shape_str(w.shape()) + ", U " +
                             shape_str(u.shape()) + " do not compose");
        const int64_t a = w.dim(0), b = w.dim(1);
        std::vector<double> mw(static_cast<size_t>(rows * b), 0.0);
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t i = 0; i < a; ++i) {
                const double mv = m.at(r, i);
                if (mv == 0.0) continue;
                for (int64_t j = 0; j < b; ++j) mw[r * b + j] += mv * w.at(i, j);
            }
        for (int64_t r = 0; r < rows; ++r)
            for (int64_t j = 0; j < b; ++j) {
                const double x = mw[r * b + j];
                if (x == 0.0) continue;
                for (int64_t c = 0; c < cols; ++c) acc[r * cols + c] += x * u.at(j, c);
            }
    }
    Tensor out({rows, cols});
    for (size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
    return out;
}

Tensor kernel_slice(const Tensor& w, int64_t pos) {
    const int64_t o = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
    Tensor s({o, in});
    for (int64_t a = 0; a < o; ++a)
        for (int64_t b = 0; b < in; ++b) s.at(a, b) = w.raw()[(a * in + b) * kk + pos];
    return s;
}

void put_slice(Tensor& w, int64_t pos, const Tensor& s) {
    const int64_t o = w.dim(0), in = w.dim(1), kk = w.dim(2) * w.dim(3);
    for (int64_t a = 0; a < o; ++a)
        for (int64_t b = 0; b < in; ++b) w.raw()[(a * in + b) * kk + pos] = s.at(a, b);
}

}  // namespace

void ZipPlan::set_stop(int64_t stop) {
    if (std::find(valid_stops.begin(), valid_stops.end(), stop) == valid_stops.end()) {
        std::string list;
        for (auto s : valid_stops) list += (list.empty() ? "" : ",") + std::to_string(s);
        throw ConfigError("stop " + std::to_string(stop) + " is not a valid partial-zip point (valid: " + list + ")");
    }
    stop_index = stop;
}

int64_t ZipPlan::partial_stop() const {
    int64_t best = 0;
    for (auto s : valid_stops)
        if (s < full_stop()) best = std::max(best, s);
    return best;
}

ZipPlan plan_zip(std::span<const ModelGraph> models) {
    check_same_topology(models);
    const ModelGraph& g = models[0];
    g.validate();
    const auto order = g.topo_order();
    std::map<std::string, size_t> pos;
    for (size_t i = 0; i < order.size(); ++i) pos[order[i]] = i;

    UnionFind uf;
    for (const auto& id : order) {
        const LayerNode& n = g.node(id);
        uf.find(id);
        if (is_elementwise(n.kind)) uf.join(id, n.inputs[0]);
        if (n.kind == LayerKind::Add)
            for (const auto& in : n.inputs) uf.join(id, in);
    }
    const std::string input_root = uf.find(g.input().id);
    std::set<std::string> output_roots;
    for (const auto& h : g.heads) output_roots.insert(uf.find(h));

    std::map<std::string, MergePoint> by_root;
    std::vector<std::string> root_order;
    for (const auto& id : order) {
        const std::string r = uf.find(id);
        if (r == input_root) {
            if (g.node(id).kind != LayerKind::Input)
                throw TopologyError("node '" + id + "' (" + std::string(kind_name(g.node(id).kind)) +
                                    ") transforms the raw input; unsupported for zipping");
            continue;
        }
        if (output_roots.count(r)) {
            if (g.node(id).kind != LayerKind::Head)
                throw TopologyError("node '" + id + "' shares a feature space with a head; unsupported for zipping");
            continue;
        }
        auto [it, fresh] = by_root.try_emplace(r);
        if (fresh) root_order.push_back(r);
        it->second.nodes.push_back(id);
    }
    const auto consumers = g.consumers();
    std::map<std::string, std::string> point_of_root;
    ZipPlan plan;
    for (const auto& r : root_order) {
        MergePoint mp = std::move(by_root[r]);
        std::string anchor = mp.nodes.back();
        for (const auto& id : mp.nodes)
            if (g.node(id).kind == LayerKind::ReLU) anchor = id;
        mp.anchor = mp.id = anchor;
        mp.width = feature_width(g, anchor);
        for (const auto& id : mp.nodes) {
            if (is_weighted(g.node(id).kind)) mp.producers.push_back(id);
            auto cit = consumers.find(id);
            if (cit == consumers.end()) continue;
            for (const auto& c : cit->second)
                if (is_weighted(g.node(c).kind)) mp.consumers.push_back(c);
        }
        std::sort(mp.consumers.begin(), mp.consumers.end(), [&](auto& a, auto& b) { return pos[a] < pos[b]; });
        mp.consumers.erase(std::unique(mp.consumers.begin(), mp.consumers.end()), mp.consumers.end());
        point_of_root[r] = mp.id;
        plan.merge_points.push_back(std::move(mp));
    }
    std::map<std::string, int64_t> index;
    for (size_t i = 0; i < plan.merge_points.size(); ++i) index[plan.merge_points[i].id] = static_cast<int64_t>(i);
    for (auto& mp : plan.merge_points)
        for (const auto& p : mp.producers) {
            const std::string r = uf.find(g.node(p).inputs[0]);
            mp.sources.push_back(r == input_root ? "input" : point_of_root.at(r));
        }
    for (int64_t s = 0; s <= plan.full_stop(); ++s) {
        bool ok = true;
        for (int64_t i = 0; i < s && ok; ++i)
            for (const auto& src : plan.merge_points[i].sources)
                if (src != "input" && index.at(src) >= s) ok = false;
        if (ok) plan.valid_stops.push_back(s);
    }
    plan.stop_index = plan.full_stop();
    return plan;
}

std::pair<Tensor, Tensor> fuse_linear(std::span<const Tensor> W, std::span<const Tensor> b, std::span<const Tensor> M,
                                      std::span<const Tensor> U_prev) {
    return {fused_product(M, W, U_prev), merge_vector(b, M)};
}

Tensor fuse_conv(std::span<const Tensor> kernels, std::span<const Tensor> M, std::span<const Tensor> U_prev) {
    if (kernels.empty()) throw ShapeError("fuse_conv: no kernels");
    const Shape ks = kernels[0].shape();
    if (ks.size() != 4) throw ShapeError("fuse_conv: kernel must be [out,in,kh,kw], got " + shape_str(ks));
    for (const auto& k : kernels)
        if (k.shape() != ks) throw ShapeError("fuse_conv: kernels differ in shape");
    Tensor out({M[0].dim(0), U_prev[0].dim(1), ks[2], ks[3]});
    for (int64_t p = 0; p < ks[2] * ks[3]; ++p) {
        std::vector<Tensor> slices;
        for (const auto& k : kernels) slices.push_back(kernel_slice(k, p));
        put_slice(out, p, fused_product(M, slices, U_prev));
    }
    return out;
}

Tensor merge_vector(std::span<const Tensor> v, std::span<const Tensor> M, bool squared) {
    if (v.size() != M.size() || v.empty()) throw ShapeError("merge_vector: per-model lists differ in length");
    std::vector<Tensor> cols, ms, ones;
    for (size_t h = 0; h < v.size(); ++h) {
        cols.push_back(v[h].reshaped({static_cast<int64_t>(v[h].size()), 1}));
        ms.push_back(squared ? square_entries(M[h]) : M[h]);
        ones.push_back(Tensor::identity(1));
    }
    Tensor r = fused_product(ms, cols, ones);
    return r.reshaped({r.dim(0)});
}

Tensor unmerge_input(const Tensor& weight, const Tensor& U) {
    const Tensor I = Tensor::identity(weight.dim(0));
    const std::array<Tensor, 1> Ms{I}, Us{U};
    if (weight.rank() == 4) {
        const std::array<Tensor, 1> K{weight};
        return fuse_conv(K, Ms, Us);
    }
    const std::array<Tensor, 1> Ws{weight};
    return fused_product(Ms, Ws, Us);
}

Propagation propagation_rule(LayerKind kind) {
    switch (kind) {
    case LayerKind::Linear:
    case LayerKind::Conv2d:
    case LayerKind::Head: return Propagation::Fuse;
    case LayerKind::BatchNorm:
    case LayerKind::LayerNorm: return Propagation::Transform;
    case LayerKind::ReLU:
    case LayerKind::AvgPool:
    case LayerKind::MaxPool: return Propagation::Pass;
    case LayerKind::Add: return Propagation::Branch;
    case LayerKind::Input: break;
    }
    throw TopologyError("a pending merge reached the Input node; the plan is malformed");
}

LayerNode merge_node(std::span<const LayerNode* const> originals, std::span<const Tensor> M,
                     std::span<const Tensor> U_prev) {
    const LayerNode& first = *originals[0];
    LayerNode out = first;
    auto gather = [&](const std::string& name) {
        std::vector<Tensor> v;
        for (const auto* n : originals) v.push_back(n->param(name));
        return v;
    };
    switch (propagation_rule(first.kind)) {
    case Propagation::Fuse: {
        const auto W = gather("weight");
        out.params["weight"] = first.kind == LayerKind::Conv2d ? fuse_conv(W, M, U_prev) : fused_product(M, W, U_prev);
        out.params["bias"] = merge_vector(gather("bias"), M);
        break;
    }
    case Propagation::Transform:
        out.params["weight"] = merge_vector(gather("weight"), M);
        out.params["bias"] = merge_vector(gather("bias"), M);
        if (first.kind == LayerKind::BatchNorm) {
            out.params["running_mean"] = merge_vector(gather("running_mean"), M);
            out.params["running_var"] = merge_vector(gather("running_var"), M, true);
        }
        break;
    case Propagation::Pass:
    case Propagation::Branch: break;
    }
    return out;
}

std::string branch_prefix(size_t model) { return "h" + std::to_string(model) + "/"; }

std::vector<MergeGroupsRecord> MergedModel::records() const {
    std::vector<MergeGroupsRecord> out;
    for (size_t i = 0; i < merge_maps.size(); ++i) out.push_back(to_record(merge_maps[i], point_ids[i]));
    return out;
}

std::vector<std::string> MergedModel::trunk_nodes() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : graph.nodes)
        if (id.find('/') == std::string::npos) out.push_back(id);
    return out;
}

MergedModel zip(std::span<const ModelGraph> models, const ZipPlan& plan, const Dataset& probe) {
    check_same_topology(models);
    plan.match_cfg.validate();
    if (std::find(plan.valid_stops.begin(), plan.valid_stops.end(), plan.stop_index) == plan.valid_stops.end())
        throw ConfigError("stop " + std::to_string(plan.stop_index) + " is not a valid partial-zip point");
    const size_t k = models.size();
    const ModelGraph& g0 = models[0];

    MergedModel out;
    out.stop_index = plan.stop_index;
    std::vector<std::string> anchors;
    for (int64_t p = 0; p < plan.stop_index; ++p) anchors.push_back(plan.merge_points[p].anchor);
    std::vector<std::vector<FeatureMatrix>> feats;
    if (!anchors.empty()) feats = capture(models, probe, anchors);

    std::map<std::string, size_t> point_of_node;
    for (int64_t p = 0; p < plan.stop_index; ++p) {
        const MergePoint& mp = plan.merge_points[p];
        for (const auto& id : mp.nodes) point_of_node[id] = static_cast<size_t>(p);
        try {
            const CorrMatrix C = correlations(feats[p]);
            MergeMap mm = match(C, feats[p], static_cast<int64_t>(k), plan.match_cfg);
            if (mm.merge_corr.empty())
                for (const auto& grp : mm.groups)
                    if (grp.size() > 1) mm.merge_corr.push_back(group_correlation(C, grp));
            out.merge_maps.push_back(std::move(mm));
        } catch (const Error& e) {
            throw ConfigError("merge point '" + mp.id + "': " + e.what());
        }
        out.point_ids.push_back(mp.id);
    }
    // Space a weighted node reads from, when that space is zipped.
    auto zipped_input = [&](const LayerNode& n) -> const MergeMap* {
        if (n.inputs.empty()) return nullptr;
        auto it = point_of_node.find(n.inputs[0]);
        return it == point_of_node.end() ? nullptr : &out.merge_maps[it->second];
    };
    auto blocks = [&](const MergeMap& mm, bool m_side) {
        std::vector<Tensor> v;
        for (size_t h = 0; h < k; ++h)
            v.push_back(m_side ? mm.M_block(static_cast<int64_t>(h)) : mm.U_block(static_cast<int64_t>(h)));
        return v;
    };

    ModelGraph& merged = out.graph;
    for (const auto& id : g0.topo_order()) {
        const LayerNode& n0 = g0.node(id);
        const bool trunk = n0.kind == LayerKind::Input || point_of_node.count(id);
        if (trunk) {
            if (n0.kind == LayerKind::Input) {
                merged.add(n0);
                continue;
            }
            std::vector<const LayerNode*> originals;
            for (const auto& m : models) originals.push_back(&m.node(id));
            const MergeMap& mm = out.merge_maps[point_of_node.at(id)];
            const auto M = blocks(mm, true);
            std::vector<Tensor> U;
            if (is_weighted(n0.kind)) {
                if (const MergeMap* prev = zipped_input(n0)) {
                    U = blocks(*prev, false);
                } else if (n0.inputs[0] == g0.input().id) {
                    const int64_t width = feature_width(g0, n0.inputs[0]);
                    U.assign(k, Tensor::identity(width));
                } else {
                    throw TopologyError("zipped layer '" + id + "' reads an unzipped feature space");
                }
            }
            try {
                merged.add(merge_node(originals, M, U));
            } catch (const Error& e) {
                throw ShapeError("merge point '" + out.point_ids[point_of_node.at(id)] + "', node '" + id + "': " + e.what());
            }
            continue;
        }
        for (size_t h = 0; h < k; ++h) {
            LayerNode n = models[h].node(id);
            n.id = branch_prefix(h) + id;
            for (auto& in : n.inputs)
                if (!(in == g0.input().id || point_of_node.count(in))) in = branch_prefix(h) + in;
            if (is_weighted(n.kind))
                if (const MergeMap* prev = zipped_input(n0))
                    n.params["weight"] = unmerge_input(n.param("weight"), prev->U_block(static_cast<int64_t>(h)));
            merged.add(std::move(n));
        }
    }
    out.task_heads.resize(k);
    for (size_t h = 0; h < k; ++h) {
        const std::string tag = models[h].meta.count("tag") ? models[h].meta.at("tag") : "m" + std::to_string(h);
        out.sources.push_back(tag);
        for (const auto& head : models[h].heads) {
            out.task_heads[h].push_back(branch_prefix(h) + head);
            merged.heads.push_back(branch_prefix(h) + head);
        }
    }
    merged.meta["zip.models"] = std::to_string(k);
    merged.meta["zip.stop"] = std::to_string(plan.stop_index);
    merged.meta["zip.match"] = std::string(algorithm_name(plan.match_cfg.algorithm));
    std::string srcs;
    for (const auto& s : out.sources) srcs += (srcs.empty() ? "" : ",") + s;
    merged.meta["zip.sources"] = srcs;
    if (g0.meta.count("arch")) merged.meta["arch"] = g0.meta.at("arch");
    merged.validate();
    if (plan.reset_bn) merged = reset_batchnorms(merged, probe);
    return out;
}

MergedModel zip_many(std::span<const ModelGraph> models, ZipPlan plan, const Dataset& probe) {
    if (models.size() > 2 && plan.match_cfg.algorithm == MatchAlgorithm::Greedy) plan.match_cfg.repeat_matches = true;
    return zip(models, plan, probe);
}

std::vector<ZipReportRow> zip_report(const MergedModel& m) {
    std::vector<ZipReportRow> rows;
    for (size_t i = 0; i < m.merge_maps.size(); ++i) {
        const MergeMap& mm = m.merge_maps[i];
        double mean = 0.0, mn = 0.0;
        if (!mm.merge_corr.empty()) {
            mean = std::accumulate(mm.merge_corr.begin(), mm.merge_corr.end(), 0.0) /
                   static_cast<double>(mm.merge_corr.size());
            mn = *std::min_element(mm.merge_corr.begin(), mm.merge_corr.end());
        }
        rows.push_back({m.point_ids[i], mm.n, static_cast<int64_t>(mm.groups.size()), mm.within_merges, mm.cross_merges,
                        mean, mn});
    }
    return rows;
}

}  // namespace zipit
