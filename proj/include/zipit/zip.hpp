#pragma once

#include <span>
#include <string>
#include <vector>

#include "zipit/checkpoint.hpp"
#include "zipit/data.hpp"
#include "zipit/graph.hpp"
#include "zipit/match.hpp"

namespace zipit {

// One shared feature space: every node whose output lives in it, joined
// through elementwise layers and Add nodes.
struct MergePoint {
    std::string id;                      // same as anchor
    std::vector<std::string> nodes;      // topological order
    std::string anchor;                  // where features are captured
    std::vector<std::string> producers;  // weighted layers writing into the space
    std::vector<std::string> consumers;  // weighted layers reading from it
    std::vector<std::string> sources;    // spaces the producers read ("input" or a point id)
    int64_t width = 0;
};

struct ZipPlan {
    std::vector<MergePoint> merge_points;
    int64_t stop_index = 0;
    // Stops where every zipped producer reads the input or a zipped space.
    std::vector<int64_t> valid_stops;
    MatchConfig match_cfg;
    bool reset_bn = true;

    // Sets stop_index; throws ConfigError for stops inside a skip group.
    void set_stop(int64_t stop);
    // The largest valid stop strictly below the full zip, or 0.
    int64_t partial_stop() const;
    int64_t full_stop() const { return static_cast<int64_t>(merge_points.size()); }
};

// Full zip by default. Throws TopologyError when the models differ.
ZipPlan plan_zip(std::span<const ModelGraph> models);

// W* = sum_h M^h W^h U^h; b* = sum_h M^h b^h.
std::pair<Tensor, Tensor> fuse_linear(std::span<const Tensor> W, std::span<const Tensor> b, std::span<const Tensor> M,
                                      std::span<const Tensor> U_prev);
// fuse_linear applied at every kernel position of [out, in, kh, kw] kernels.
Tensor fuse_conv(std::span<const Tensor> kernels, std::span<const Tensor> M, std::span<const Tensor> U_prev);
// sum_h M^h v^h, or with squared M entries.
Tensor merge_vector(std::span<const Tensor> v, std::span<const Tensor> M, bool squared = false);
// W U for a linear weight or per kernel position of a conv weight.
Tensor unmerge_input(const Tensor& weight, const Tensor& U);

enum class Propagation {
    Fuse,       // weighted layer absorbs M (and the previous U) and stops
    Transform,  // normalization parameters are merged, propagation continues
    Pass,       // ReLU / pooling: nothing to change
    Branch,     // Add: every producer and consumer shares the same M / U
};

// Throws TopologyError for Input (a pending merge reached the input).
Propagation propagation_rule(LayerKind kind);

// Merged copy of one node given the per-model originals.
LayerNode merge_node(std::span<const LayerNode* const> originals, std::span<const Tensor> M,
                     std::span<const Tensor> U_prev);

struct MergedModel {
    ModelGraph graph;  // shared trunk plus one prefixed branch per model
    std::vector<std::string> point_ids;   // zipped points in order
    std::vector<MergeMap> merge_maps;     // one per zipped point
    std::vector<std::string> sources;     // tags of the input models
    std::vector<std::vector<std::string>> task_heads;  // heads of model h
    int64_t stop_index = 0;

    std::vector<MergeGroupsRecord> records() const;
    std::vector<std::string> trunk_nodes() const;
};

// Prefix for the unzipped copy of model h's nodes.
std::string branch_prefix(size_t model);

MergedModel zip(std::span<const ModelGraph> models, const ZipPlan& plan, const Dataset& probe);
// zip for k >= 2 models; greedy matching switches repeated matches on for k > 2.
MergedModel zip_many(std::span<const ModelGraph> models, ZipPlan plan, const Dataset& probe);

// point_id, zipped, width, groups, within_merges, cross_merges, mean_corr, min_corr
struct ZipReportRow {
    std::string point_id;
    int64_t width;
    int64_t groups;
    int64_t within_merges;
    int64_t cross_merges;
    double mean_corr;
    double min_corr;
};
std::vector<ZipReportRow> zip_report(const MergedModel& m);

}  // namespace zipit
