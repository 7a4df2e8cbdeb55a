#include "zipit/match.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <set>

#include "zipit/error.hpp"
#include "zipit/rng.hpp"

namespace zipit {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_corr(const CorrMatrix& C, int64_t k) {
    if (k < 2) throw ConfigError("matching needs at least 2 models, got " + std::to_string(k));
    if (C.dim <= 0 || C.dim % k != 0)
        throw ShapeError("correlation dim " + std::to_string(C.dim) + " is not a multiple of " + std::to_string(k));
    if (static_cast<int64_t>(C.data.size()) != C.dim * C.dim) throw ShapeError("correlation matrix has wrong size");
}

int64_t budget_per_model(double beta, int64_t n, int64_t k) {
    return static_cast<int64_t>(std::floor(beta * static_cast<double>(n) / static_cast<double>(k) + 1e-9));
}

// Model of a member set if all members come from one model, else -1.
int64_t pure_model(const std::vector<int64_t>& members, int64_t n) {
    const int64_t m = members.front() / n;
    for (auto i : members)
        if (i / n != m) return -1;
    return m;
}

Groups sorted_groups(Groups g) {
    for (auto& grp : g) std::sort(grp.begin(), grp.end());
    std::sort(g.begin(), g.end(), [](const auto& a, const auto& b) { return a.front() < b.front(); });
    return g;
}

double sq_dist(const std::vector<double>& a, const double* b, size_t len) {
    double s = 0.0;
    for (size_t i = 0; i < len; ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return s;
}

}  // namespace

std::string_view algorithm_name(MatchAlgorithm a) {
    switch (a) {
    case MatchAlgorithm::Greedy: return "greedy";
    case MatchAlgorithm::Optimal: return "optimal";
    case MatchAlgorithm::Permute: return "permute";
    case MatchAlgorithm::KMeans: return "kmeans";
    case MatchAlgorithm::Identity: return "identity";
    }
    return "?";
}

MatchAlgorithm algorithm_from_name(std::string_view name) {
    for (auto a : {MatchAlgorithm::Greedy, MatchAlgorithm::Optimal, MatchAlgorithm::Permute, MatchAlgorithm::KMeans,
                   MatchAlgorithm::Identity})
        if (algorithm_name(a) == name) return a;
    throw ConfigError("unknown matching algorithm '" + std::string(name) + "'");
}

void MatchConfig::validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in (0,1]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta must lie in [0,1]");
}

std::pair<Tensor, Tensor> build_mu(const Groups& groups, int64_t n, int64_t k, bool require_cover) {
    if (static_cast<int64_t>(groups.size()) != n)
        throw ConfigError("expected " + std::to_string(n) + " groups, got " + std::to_string(groups.size()));
    const int64_t dim = k * n;
    std::vector<char> used(static_cast<size_t>(dim), 0);
    Tensor M({n, dim}), U({dim, n});
    for (int64_t u = 0; u < n; ++u) {
        const auto& g = groups[static_cast<size_t>(u)];
        if (g.empty()) throw ConfigError("group " + std::to_string(u) + " is empty");
        const float w = 1.0f / static_cast<float>(g.size());
        for (auto i : g) {
            if (i < 0 || i >= dim) throw ConfigError("group index " + std::to_string(i) + " out of range");
            if (used[static_cast<size_t>(i)]) throw ConfigError("index " + std::to_string(i) + " is in two groups");
            used[static_cast<size_t>(i)] = 1;
            M.at(u, i) = w;
            U.at(i, u) = 1.0f;
        }
    }
    if (require_cover)
        for (int64_t i = 0; i < dim; ++i)
            if (!used[static_cast<size_t>(i)]) throw ConfigError("index " + std::to_string(i) + " is in no group");
    return {std::move(M), std::move(U)};
}

MergeMap make_merge_map(Groups groups, int64_t n, int64_t k, bool require_cover) {
    MergeMap m;
    m.k_models = k;
    m.n = n;
    m.groups = sorted_groups(std::move(groups));
    std::tie(m.M, m.U) = build_mu(m.groups, n, k, require_cover);
    for (const auto& g : m.groups) {
        std::set<int64_t> models;
        for (auto i : g) models.insert(i / n);
        m.cross_merges += static_cast<int64_t>(models.size()) - 1;
        m.within_merges += static_cast<int64_t>(g.size() - models.size());
    }
    return m;
}

MergeMap match_greedy(const CorrMatrix& C, int64_t k, const MatchConfig& cfg) {
    cfg.validate();
    check_corr(C, k);
    const int64_t dim = C.dim, n = dim / k;
    std::vector<int64_t> budget(static_cast<size_t>(k), budget_per_model(cfg.beta, n, k));
    std::vector<double> S = C.data;
    std::vector<std::vector<int64_t>> members(static_cast<size_t>(dim));
    for (int64_t i = 0; i < dim; ++i) members[static_cast<size_t>(i)] = {i};
    std::vector<char> active(static_cast<size_t>(dim), 1);
    std::vector<char> matched(static_cast<size_t>(dim), 0);
    Groups done;
    int64_t count = dim;
    std::vector<double> merge_corr;
    int64_t within = 0, cross = 0;

    while (count > n) {
        double best = kNegInf;
        int64_t bi = -1, bj = -1;
        for (int64_t i = 0; i < dim; ++i) {
            if (!active[i] || (!cfg.repeat_matches && matched[i])) continue;
            const int64_t mi = pure_model(members[i], n);
            for (int64_t j = i + 1; j < dim; ++j) {
                if (!active[j] || (!cfg.repeat_matches && matched[j])) continue;
                const int64_t mj = pure_model(members[j], n);
                if (mi >= 0 && mi == mj && budget[mi] <= 0) continue;
                const double v = S[i * dim + j];
                if (v > best) {
                    best = v;
                    bi = i;
                    bj = j;
                }
            }
        }
        if (bi < 0) {
            throw ConfigError("matching is infeasible: " + std::to_string(count - n) +
                              " more merges are needed to reach " + std::to_string(n) +
                              " features but no eligible pair remains (raise beta or enable repeated matches)");
        }
        const int64_t mi = pure_model(members[bi], n), mj = pure_model(members[bj], n);
        if (mi >= 0 && mi == mj) {
            --budget[mi];
            ++within;
        } else {
            ++cross;
        }
        merge_corr.push_back(best);
        auto& mb = members[bi];
        mb.insert(mb.end(), members[bj].begin(), members[bj].end());
        members[bj].clear();
        active[bj] = 0;
        --count;
        if (cfg.repeat_matches) {
            for (int64_t x = 0; x < dim; ++x) {
                if (!active[x] || x == bi) continue;
                const double v = cfg.alpha * std::min(S[bi * dim + x], S[bj * dim + x]);
                S[bi * dim + x] = v;
                S[x * dim + bi] = v;
            }
        } else {
            matched[bi] = 1;
            done.push_back(mb);
            active[bi] = 0;
        }
    }
    Groups groups = std::move(done);
    for (int64_t i = 0; i < dim; ++i)
        if (active[i]) groups.push_back(members[i]);
    MergeMap m = make_merge_map(std::move(groups), n, k, true);
    m.merge_corr = std::move(merge_corr);
    m.within_merges = within;
    m.cross_merges = cross;
    return m;
}

MergeMap match_optimal(const CorrMatrix& C, int64_t k, const MatchConfig& cfg) {
    cfg.validate();
    check_corr(C, k);
    if (k != 2) throw ConfigError("optimal matching supports exactly 2 models");
    if (C.dim > kOptimalMaxDim)
        throw ConfigError("optimal matching is exponential; dim " + std::to_string(C.dim) + " exceeds " +
                          std::to_string(kOptimalMaxDim) + ", use greedy");
    const int64_t dim = C.dim, n = dim / 2;
    const int64_t cap = budget_per_model(cfg.beta, n, k);
    auto eligible = [&](int64_t i, int64_t j, const std::array<int64_t, 2>& used) {
        const int64_t mi = i / n, mj = j / n;
        return mi != mj || used[mi] < cap;
    };
    std::vector<int64_t> mate(static_cast<size_t>(dim), -1), best_mate;
    double best = kNegInf;
    std::array<int64_t, 2> used{0, 0};

    auto bound = [&]() {
        double b = 0.0;
        for (int64_t i = 0; i < dim; ++i) {
            if (mate[i] >= 0) continue;
            double mx = kNegInf;
            for (int64_t j = 0; j < dim; ++j)
                if (j != i && mate[j] < 0) mx = std::max(mx, C(i, j));
            b += mx;
        }
        return b / 2.0;
    };
    auto search = [&](auto&& self, double acc) -> void {
        int64_t i = 0;
        while (i < dim && mate[i] >= 0) ++i;
        if (i == dim) {
            if (acc > best) {
                best = acc;
                best_mate = mate;
            }
            return;
        }
        if (acc + bound() <= best) return;
        for (int64_t j = i + 1; j < dim; ++j) {
            if (mate[j] >= 0 || !eligible(i, j, used)) continue;
            const bool within = i / n == j / n;
            if (within) ++used[i / n];
            mate[i] = j;
            mate[j] = i;
            self(self, acc + C(i, j));
            mate[i] = mate[j] = -1;
            if (within) --used[i / n];
        }
    };
    search(search, 0.0);
    if (best_mate.empty()) throw ConfigError("optimal matching is infeasible under the budget");
    Groups groups;
    std::vector<double> corr;
    for (int64_t i = 0; i < dim; ++i)
        if (best_mate[i] > i) {
            groups.push_back({i, best_mate[i]});
            corr.push_back(C(i, best_mate[i]));
        }
    MergeMap m = make_merge_map(std::move(groups), n, k, true);
    m.merge_corr = std::move(corr);
    return m;
}

std::vector<int64_t> linear_sum_assignment(const std::vector<double>& w, int64_t n) {
    // Shortest augmenting path (Jonker-Volgenant style potentials) on cost -w.
    const double inf = std::numeric_limits<double>::infinity();
    std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
    std::vector<int64_t> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
    for (int64_t i = 1; i <= n; ++i) {
        p[0] = i;
        int64_t j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n + 1), inf);
        std::vector<char> used(static_cast<size_t>(n + 1), 0);
        do {
            used[j0] = 1;
            const int64_t i0 = p[j0];
            double delta = inf;
            int64_t j1 = 0;
            for (int64_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = -w[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int64_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int64_t j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int64_t> perm(static_cast<size_t>(n));
    for (int64_t j = 1; j <= n; ++j) perm[p[j] - 1] = j - 1;
    return perm;
}

MergeMap match_permute(const CorrMatrix& C) {
    check_corr(C, 2);
    const int64_t n = C.dim / 2;
    std::vector<double> w(static_cast<size_t>(n * n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < n; ++j) w[i * n + j] = C(i, n + j);
    const auto perm = linear_sum_assignment(w, n);
    Groups groups;
    std::vector<double> corr;
    for (int64_t i = 0; i < n; ++i) {
        groups.push_back({i, n + perm[i]});
        corr.push_back(C(i, n + perm[i]));
    }
    MergeMap m = make_merge_map(std::move(groups), n, 2, true);
    m.merge_corr = std::move(corr);
    return m;
}

MergeMap match_kmeans(std::span<const FeatureMatrix> feats, const MatchConfig& cfg) {
    cfg.validate();
    const int64_t k = static_cast<int64_t>(feats.size());
    if (k < 2) throw ConfigError("kmeans matching needs at least 2 models");
    const int64_t n = feats[0].features, s = feats[0].samples;
    for (const auto& f : feats)
        if (f.features != n || f.samples != s) throw ShapeError("kmeans: feature matrices differ in shape");
    const int64_t N = k * n;
    const size_t len = static_cast<size_t>(s);
    // Each concatenated column, standardized, is one point.
    std::vector<double> pts(static_cast<size_t>(N) * len);
    for (int64_t m = 0; m < k; ++m)
        for (int64_t c = 0; c < n; ++c) {
            double* p = pts.data() + (m * n + c) * s;
            double mean = 0.0;
            for (int64_t r = 0; r < s; ++r) mean += feats[m].at(r, c);
            mean /= static_cast<double>(s);
            double ss = 0.0;
            for (int64_t r = 0; r < s; ++r) {
                p[r] = feats[m].at(r, c) - mean;
                ss += p[r] * p[r];
            }
            const double sd = std::sqrt(ss / static_cast<double>(s));
            if (sd > 0.0)
                for (int64_t r = 0; r < s; ++r) p[r] /= sd;
        }
    auto point = [&](int64_t i) { return pts.data() + i * s; };
    {
        std::set<std::vector<double>> distinct;
        for (int64_t i = 0; i < N; ++i) distinct.emplace(point(i), point(i) + s);
        if (static_cast<int64_t>(distinct.size()) < n)
            throw ConfigError("kmeans: only " + std::to_string(distinct.size()) + " distinct points for " +
                              std::to_string(n) + " clusters");
    }
    Rng rng(cfg.seed);
    std::vector<std::vector<double>> centers;
    const int64_t first = static_cast<int64_t>(rng.below(static_cast<uint64_t>(N)));
    centers.emplace_back(point(first), point(first) + s);
    std::vector<double> d2(static_cast<size_t>(N));
    for (int64_t i = 0; i < N; ++i) d2[i] = sq_dist(centers[0], point(i), len);
    while (static_cast<int64_t>(centers.size()) < n) {
        double total = 0.0;
        for (auto v : d2) total += v;
        const double u = rng.uniform() * total;
        double acc = 0.0;
        int64_t pick = -1;
        for (int64_t i = 0; i < N; ++i) {
            acc += d2[i];
            if (d2[i] > 0.0 && acc > u) {
                pick = i;
                break;
            }
        }
        if (pick < 0)
            for (int64_t i = N - 1; i >= 0; --i)
                if (d2[i] > 0.0) {
                    pick = i;
                    break;
                }
        centers.emplace_back(point(pick), point(pick) + s);
        for (int64_t i = 0; i < N; ++i) d2[i] = std::min(d2[i], sq_dist(centers.back(), point(i), len));
    }
    std::vector<int64_t> assign(static_cast<size_t>(N), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (int64_t i = 0; i < N; ++i) {
            int64_t bc = 0;
            double bd = sq_dist(centers[0], point(i), len);
            for (int64_t c = 1; c < n; ++c) {
                const double d = sq_dist(centers[c], point(i), len);
                if (d < bd) {
                    bd = d;
                    bc = c;
                }
            }
            if (assign[i] != bc) {
                assign[i] = bc;
                changed = true;
            }
        }
        // Empty clusters take the point farthest from its current center.
        for (int64_t c = 0; c < n; ++c) {
            if (std::find(assign.begin(), assign.end(), c) != assign.end()) continue;
            int64_t far = -1;
            double fd = -1.0;
            for (int64_t i = 0; i < N; ++i) {
                const int64_t a = assign[i];
                if (std::count(assign.begin(), assign.end(), a) < 2) continue;
                const double d = sq_dist(centers[a], point(i), len);
                if (d > fd) {
                    fd = d;
                    far = i;
                }
            }
            assign[far] = c;
            changed = true;
        }
        for (int64_t c = 0; c < n; ++c) {
            std::vector<double> sum(len, 0.0);
            int64_t cnt = 0;
            for (int64_t i = 0; i < N; ++i)
                if (assign[i] == c) {
                    const double* p = point(i);
                    for (size_t r = 0; r < len; ++r) sum[r] += p[r];
                    ++cnt;
                }
            for (auto& v : sum) v /= static_cast<double>(cnt);
            centers[c] = std::move(sum);
        }
        if (!changed) break;
    }
    Groups groups(static_cast<size_t>(n));
    for (int64_t i = 0; i < N; ++i) groups[assign[i]].push_back(i);
    return make_merge_map(std::move(groups), n, k, true);
}

MergeMap match_identity(int64_t n, int64_t k) {
    if (n < 1 || k < 1) throw ConfigError("identity matching needs n, k >= 1");
    Groups groups(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i)
        for (int64_t m = 0; m < k; ++m) groups[i].push_back(m * n + i);
    return make_merge_map(std::move(groups), n, k, true);
}

MergeMap match(const CorrMatrix& C, std::span<const FeatureMatrix> feats, int64_t k, const MatchConfig& cfg) {
    switch (cfg.algorithm) {
    case MatchAlgorithm::Greedy: return match_greedy(C, k, cfg);
    case MatchAlgorithm::Optimal: return match_optimal(C, k, cfg);
    case MatchAlgorithm::Permute:
        if (k != 2) throw ConfigError("permute matching supports exactly 2 models");
        return match_permute(C);
    case MatchAlgorithm::KMeans: return match_kmeans(feats, cfg);
    case MatchAlgorithm::Identity: return match_identity(C.dim / k, k);
    }
    throw ConfigError("unknown matching algorithm");
}

double group_correlation(const CorrMatrix& C, const std::vector<int64_t>& group) {
    if (group.size() < 2) return 1.0;
    double s = 0.0;
    int64_t pairs = 0;
    for (size_t a = 0; a < group.size(); ++a)
        for (size_t b = a + 1; b < group.size(); ++b, ++pairs) s += C(group[a], group[b]);
    return s / static_cast<double>(pairs);
}

double total_weight(const CorrMatrix& C, const Groups& groups) {
    double s = 0.0;
    for (const auto& g : groups)
        for (size_t a = 0; a < g.size(); ++a)
            for (size_t b = a + 1; b < g.size(); ++b) s += C(g[a], g[b]);
    return s;
}

MergeGroupsRecord to_record(const MergeMap& m, const std::string& point) {
    return {point, m.k_models, m.n, m.groups};
}

}  // namespace zipit
