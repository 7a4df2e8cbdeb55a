#pragma once

#include <span>
#include <string>
#include <vector>

#include "zipit/data.hpp"
#include "zipit/graph.hpp"

namespace zipit {

// Probe samples x features, row-major. Conv activations contribute one row
// per spatial location.
struct FeatureMatrix {
    int64_t samples = 0;
    int64_t features = 0;
    std::vector<float> data;
    std::string model_tag;
    std::string node_id;

    float at(int64_t r, int64_t c) const { return data[static_cast<size_t>(r * features + c)]; }
};

// Symmetric Pearson correlations over the concatenated feature space.
struct CorrMatrix {
    int64_t dim = 0;
    std::vector<double> data;

    double operator()(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * dim + j)]; }
    double& operator()(int64_t i, int64_t j) { return data[static_cast<size_t>(i * dim + j)]; }
};

inline constexpr int64_t kDefaultProbeSize = 256;

FeatureMatrix to_features(const Tensor& activation, std::string model_tag, std::string node_id);

// out[p][m] is the feature matrix of model m at points[p].
std::vector<std::vector<FeatureMatrix>> capture(std::span<const ModelGraph> models, const Dataset& probe,
                                                const std::vector<std::string>& points);

CorrMatrix correlations(std::span<const FeatureMatrix> feats);

// Replaces every BatchNorm's running statistics with the mean and population
// variance of its input over `data`, in topological order so downstream
// statistics see the already-reset upstream layers. Variances are clamped to
// at least the layer's epsilon.
ModelGraph reset_batchnorms(const ModelGraph& model, const Dataset& data);

struct StageCorrelation {
    std::string point_id;
    double mean_corr;
};

// Mean correlation of greedily matched cross-model pairs at each point.
std::vector<StageCorrelation> stage_correlation_report(const ModelGraph& a, const ModelGraph& b, const Dataset& probe,
                                                       const std::vector<std::string>& points);

}  // namespace zipit
