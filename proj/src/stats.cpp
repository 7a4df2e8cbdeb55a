#include "zipit/stats.hpp"

#include <algorithm>
#include <cmath>

#include "kernels.hpp"
#include "zipit/error.hpp"
#include "zipit/forward.hpp"
#include "zipit/match.hpp"

namespace zipit {

namespace {
constexpr int64_t kCaptureBatch = 512;
}

FeatureMatrix to_features(const Tensor& a, std::string model_tag, std::string node_id) {
    if (a.rank() != 2 && a.rank() != 4) throw ShapeError("node '" + node_id + "': cannot flatten " + shape_str(a.shape()));
    FeatureMatrix f;
    const int64_t n = a.dim(0), c = a.dim(1), sp = kernels::spatial_size(a);
    f.samples = n * sp;
    f.features = c;
    f.data.resize(static_cast<size_t>(f.samples * c));
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t t = 0; t < sp; ++t) f.data[static_cast<size_t>(((s * sp) + t) * c + ch)] = a.raw()[(s * c + ch) * sp + t];
    f.model_tag = std::move(model_tag);
    f.node_id = std::move(node_id);
    return f;
}

std::vector<std::vector<FeatureMatrix>> capture(std::span<const ModelGraph> models, const Dataset& probe,
                                                const std::vector<std::string>& points) {
    if (probe.size() == 0) throw ConfigError("probe set is empty");
    std::vector<std::vector<FeatureMatrix>> out(points.size(), std::vector<FeatureMatrix>(models.size()));
    for (size_t m = 0; m < models.size(); ++m) {
        const ModelGraph& g = models[m];
        for (const auto& p : points)
            if (!g.contains(p)) throw TopologyError("capture point '" + p + "' is not in the model");
        const std::string tag = g.meta.count("tag") ? g.meta.at("tag") : "m" + std::to_string(m);
        for (int64_t start = 0; start < probe.size(); start += kCaptureBatch) {
            std::vector<int64_t> rows;
            for (int64_t r = start; r < std::min(probe.size(), start + kCaptureBatch); ++r) rows.push_back(r);
            const Dataset chunk = subset(probe, rows);
            const Activations acts = forward(g, chunk.x);
            for (size_t p = 0; p < points.size(); ++p) {
                FeatureMatrix part = to_features(acts.at(points[p]), tag, points[p]);
                FeatureMatrix& dst = out[p][m];
                if (dst.data.empty()) {
                    dst = std::move(part);
                } else {
                    dst.samples += part.samples;
                    dst.data.insert(dst.data.end(), part.data.begin(), part.data.end());
                }
            }
        }
    }
    return out;
}

CorrMatrix correlations(std::span<const FeatureMatrix> feats) {
    if (feats.empty()) throw ConfigError("no feature matrices to correlate");
    const int64_t n = feats[0].samples;
    if (n < 2) throw ConfigError("correlations need at least 2 samples, got " + std::to_string(n));
    int64_t dim = 0;
    for (const auto& f : feats) {
        if (f.samples != n) throw ShapeError("feature matrices have different sample counts");
        dim += f.features;
    }
    // Centered columns in double, column-major.
    std::vector<double> z(static_cast<size_t>(dim * n));
    std::vector<double> norm(static_cast<size_t>(dim));
    int64_t col = 0;
    for (const auto& f : feats)
        for (int64_t c = 0; c < f.features; ++c, ++col) {
            double* zc = z.data() + col * n;
            double mean = 0.0;
            for (int64_t r = 0; r < n; ++r) mean += f.at(r, c);
            mean /= static_cast<double>(n);
            double ss = 0.0;
            for (int64_t r = 0; r < n; ++r) {
                zc[r] = f.at(r, c) - mean;
                ss += zc[r] * zc[r];
            }
            norm[static_cast<size_t>(col)] = std::sqrt(ss);
        }
    CorrMatrix C;
    C.dim = dim;
    C.data.assign(static_cast<size_t>(dim * dim), 0.0);
    for (int64_t i = 0; i < dim; ++i) {
        C(i, i) = 1.0;
        const double ni = norm[static_cast<size_t>(i)];
        if (ni == 0.0) continue;
        for (int64_t j = i + 1; j < dim; ++j) {
            const double nj = norm[static_cast<size_t>(j)];
            if (nj == 0.0) continue;
            const double* a = z.data() + i * n;
            const double* b = z.data() + j * n;
            double dot = 0.0;
            for (int64_t r = 0; r < n; ++r) dot += a[r] * b[r];
            const double v = std::clamp(dot / (ni * nj), -1.0, 1.0);
            C(i, j) = v;
            C(j, i) = v;
        }
    }
    return C;
}

ModelGraph reset_batchnorms(const ModelGraph& model, const Dataset& data) {
    if (data.size() == 0) throw ConfigError("batch-norm reset needs data");
    ModelGraph out = model;
    for (const auto& id : model.topo_order()) {
        LayerNode& n = out.node(id);
        if (n.kind != LayerKind::BatchNorm) continue;
        std::vector<double> sum, sq;
        int64_t count = 0;
        // Two passes over chunks: mean first, then squared deviations.
        std::vector<Tensor> inputs;
        for (int64_t start = 0; start < data.size(); start += kCaptureBatch) {
            std::vector<int64_t> rows;
            for (int64_t r = start; r < std::min(data.size(), start + kCaptureBatch); ++r) rows.push_back(r);
            Activations acts = forward(out, subset(data, rows).x);
            inputs.push_back(std::move(acts.at(n.inputs[0])));
        }
        const int64_t c = inputs[0].dim(1);
        sum.assign(static_cast<size_t>(c), 0.0);
        sq.assign(static_cast<size_t>(c), 0.0);
        for (const auto& x : inputs) {
            const int64_t sp = kernels::spatial_size(x);
            count += x.dim(0) * sp;
            for (int64_t s = 0; s < x.dim(0); ++s)
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t t = 0; t < sp; ++t) sum[ch] += x.raw()[(s * c + ch) * sp + t];
        }
        for (auto& v : sum) v /= static_cast<double>(count);
        for (const auto& x : inputs) {
            const int64_t sp = kernels::spatial_size(x);
            for (int64_t s = 0; s < x.dim(0); ++s)
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t t = 0; t < sp; ++t) {
                        const double d = x.raw()[(s * c + ch) * sp + t] - sum[ch];
                        sq[ch] += d * d;
                    }
        }
        const double eps = n.attr("eps", kDefaultNormEpsilon);
        auto& rm = n.param("running_mean");
        auto& rv = n.param("running_var");
        for (int64_t ch = 0; ch < c; ++ch) {
            rm[ch] = static_cast<float>(sum[ch]);
            rv[ch] = static_cast<float>(std::max(sq[ch] / static_cast<double>(count), eps));
        }
    }
    return out;
}

std::vector<StageCorrelation> stage_correlation_report(const ModelGraph& a, const ModelGraph& b, const Dataset& probe,
                                                       const std::vector<std::string>& points) {
    const std::vector<ModelGraph> models{a, b};
    const auto feats = capture(models, probe, points);
    std::vector<StageCorrelation> rows;
    MatchConfig cfg;
    cfg.beta = 0.0;
    for (size_t p = 0; p < points.size(); ++p) {
        const CorrMatrix C = correlations(feats[p]);
        const MergeMap mm = match_greedy(C, 2, cfg);
        double total = 0.0;
        for (const auto& g : mm.groups) total += C(g[0], g[1]);
        rows.push_back({points[p], total / static_cast<double>(mm.groups.size())});
    }
    return rows;
}

}  // namespace zipit
