#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "zipit/checkpoint.hpp"
#include "zipit/stats.hpp"
#include "zipit/tensor.hpp"

namespace zipit {

enum class MatchAlgorithm { Greedy, Optimal, Permute, KMeans, Identity };

std::string_view algorithm_name(MatchAlgorithm a);
MatchAlgorithm algorithm_from_name(std::string_view name);

struct MatchConfig {
    MatchAlgorithm algorithm = MatchAlgorithm::Greedy;
    double alpha = 0.1;
    double beta = 0.5;
    bool repeat_matches = false;
    uint64_t seed = 0;

    void validate() const;
};

using Groups = std::vector<std::vector<int64_t>>;

struct MergeMap {
    int64_t k_models = 0;
    int64_t n = 0;
    Groups groups;  // sorted members, groups ordered by their smallest index
    Tensor M;       // n x (k n)
    Tensor U;       // (k n) x n
    std::vector<double> merge_corr;  // correlation of each merge as it was made
    int64_t within_merges = 0;
    int64_t cross_merges = 0;

    Tensor M_block(int64_t model) const { return col_block(M, model * n, (model + 1) * n); }
    Tensor U_block(int64_t model) const { return row_block(U, model * n, (model + 1) * n); }
};

// M row u averages group u; U column u is the indicator of group u.
// Throws when groups overlap or fall outside {0..k n - 1}; with
// require_cover every index must belong to some group.
std::pair<Tensor, Tensor> build_mu(const Groups& groups, int64_t n, int64_t k, bool require_cover = false);

// Fills M, U and the within/cross counts from groups.
MergeMap make_merge_map(Groups groups, int64_t n, int64_t k, bool require_cover);

MergeMap match_greedy(const CorrMatrix& C, int64_t k, const MatchConfig& cfg);
inline constexpr int64_t kOptimalMaxDim = 24;
MergeMap match_optimal(const CorrMatrix& C, int64_t k, const MatchConfig& cfg);
MergeMap match_permute(const CorrMatrix& C);
MergeMap match_kmeans(std::span<const FeatureMatrix> feats, const MatchConfig& cfg);
MergeMap match_identity(int64_t n, int64_t k);

// Max-weight assignment: perm[i] = column for row i, maximizing sum w(i, perm[i]).
std::vector<int64_t> linear_sum_assignment(const std::vector<double>& w, int64_t n);

// Dispatches on cfg.algorithm.
MergeMap match(const CorrMatrix& C, std::span<const FeatureMatrix> feats, int64_t k, const MatchConfig& cfg);

// Mean pairwise correlation inside a group (1 for singletons).
double group_correlation(const CorrMatrix& C, const std::vector<int64_t>& group);
double total_weight(const CorrMatrix& C, const Groups& groups);

MergeGroupsRecord to_record(const MergeMap& m, const std::string& point);

}  // namespace zipit
