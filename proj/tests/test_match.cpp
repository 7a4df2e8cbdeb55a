#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <numeric>

#include "match_oracles.hpp"
#include "support.hpp"
#include "zipit/error.hpp"
#include "zipit/match.hpp"

using namespace zipit;
using namespace testing;

namespace {

bool is_identity(const Tensor& t) {
    for (int64_t i = 0; i < t.dim(0); ++i)
        for (int64_t j = 0; j < t.dim(1); ++j)
            if (t.at(i, j) != (i == j ? 1.0f : 0.0f)) return false;
    return true;
}

}  // namespace

TEST_CASE("M U is the identity for every algorithm") {
    for (uint64_t s = 0; s < 10; ++s) {
        const CorrMatrix C = related_corr(6, 2, s);
        MatchConfig cfg;
        for (auto algo : {MatchAlgorithm::Greedy, MatchAlgorithm::Optimal, MatchAlgorithm::Permute,
                          MatchAlgorithm::Identity}) {
            cfg.algorithm = algo;
            const MergeMap m = match(C, {}, 2, cfg);
            CHECK(is_identity(matmul(m.M, m.U)));
            CHECK(m.M.shape() == Shape{6, 12});
            CHECK(m.U.shape() == Shape{12, 6});
        }
    }
}

TEST_CASE("build_mu rejects bad groupings") {
    CHECK_THROWS_AS(build_mu({{0, 1}, {1, 2}}, 2, 2), ConfigError);
    CHECK_THROWS_AS(build_mu({{0, 9}, {1, 2}}, 2, 2), ConfigError);
    CHECK_THROWS_AS(build_mu({{0, 1}}, 2, 2), ConfigError);
    CHECK_THROWS_AS(build_mu({{0, 1}, {2}}, 2, 2, true), ConfigError);
    const auto [M, U] = build_mu({{0, 1, 2}, {3}}, 2, 2);
    CHECK(M.at(0, 1) == 1.0f / 3.0f);
    CHECK(U.at(3, 1) == 1.0f);
}

TEST_CASE("optimal matching equals brute force") {
    int cases = 0;
    for (int64_t dim : {4, 6, 8, 10, 12})
        for (double beta : {0.0, 0.5, 1.0})
            for (uint64_t s = 0; s < 6; ++s) {
                const CorrMatrix C = s % 2 ? random_corr(dim, s * 31 + dim) : related_corr(dim / 2, 2, s + dim);
                MatchConfig cfg;
                cfg.beta = beta;
                const MergeMap m = match_optimal(C, 2, cfg);
                const Groups ref = brute_force_pairs(C, beta);
                CHECK(m.groups == ref);
                ++cases;
            }
    CHECK(cases == 90);
    CHECK_THROWS_AS(match_optimal(random_corr(26, 0), 2, MatchConfig{}), ConfigError);
}

TEST_CASE("greedy is within half of optimal") {
    double worst = 1e9;
    for (int64_t dim : {4, 8, 12})
        for (double beta : {0.0, 0.5, 1.0})
            for (uint64_t s = 0; s < 10; ++s) {
                CorrMatrix C = s % 2 ? related_corr(dim / 2, 2, 100 + s, 0.7) : random_corr(dim, 100 + s);
                for (auto& v : C.data) v = std::abs(v);
                MatchConfig cfg;
                cfg.beta = beta;
                const double g = pair_weight(C, match_greedy(C, 2, cfg).groups);
                const double o = pair_weight(C, match_optimal(C, 2, cfg).groups);
                REQUIRE(o > 0);
                CHECK(g >= 0.5 * o);
                CHECK(g <= o + 1e-12);
                worst = std::min(worst, g / o);
            }
    MESSAGE("worst greedy/optimal ratio " << worst);
}

TEST_CASE("linear sum assignment equals permutation brute force") {
    for (int64_t n = 1; n <= 6; ++n)
        for (uint64_t s = 0; s < 20; ++s) {
            Rng rng(s * 7 + n);
            std::vector<double> w(static_cast<size_t>(n * n));
            for (auto& v : w) v = rng.uniform(-2.0, 2.0);
            std::vector<int64_t> p(static_cast<size_t>(n)), best;
            std::iota(p.begin(), p.end(), 0);
            double bv = -1e300;
            do {
                double v = 0;
                for (int64_t i = 0; i < n; ++i) v += w[i * n + p[i]];
                if (v > bv) {
                    bv = v;
                    best = p;
                }
            } while (std::next_permutation(p.begin(), p.end()));
            CHECK(linear_sum_assignment(w, n) == best);
        }
}

TEST_CASE("permute pairs each A feature with one B feature") {
    const CorrMatrix C = related_corr(8, 2, 3, 0.2);
    const MergeMap m = match_permute(C);
    CHECK(m.cross_merges == 8);
    CHECK(m.within_merges == 0);
    for (const auto& g : m.groups) {
        REQUIRE(g.size() == 2);
        CHECK(g[0] < 8);
        CHECK(g[1] >= 8);
        CHECK(C(g[0], g[1]) > 0.8);
    }
}

TEST_CASE("greedy respects the same-model budget") {
    for (double beta : {0.0, 0.25, 0.5, 1.0}) {
        const CorrMatrix C = random_corr(16, 9);
        MatchConfig cfg;
        cfg.beta = beta;
        const MergeMap m = match_greedy(C, 2, cfg);
        std::array<int64_t, 2> within{0, 0};
        for (const auto& g : m.groups)
            if (g.size() == 2 && g[0] / 8 == g[1] / 8) ++within[g[0] / 8];
        const auto cap = static_cast<int64_t>(std::floor(beta * 8 / 2 + 1e-9));
        CHECK(within[0] <= cap);
        CHECK(within[1] <= cap);
        CHECK(m.within_merges == within[0] + within[1]);
        CHECK(m.merge_corr.size() == 8);
    }
}

TEST_CASE("greedy takes the best pair first") {
    CorrMatrix C = random_corr(6, 4);
    for (auto& v : C.data)
        if (v != 1.0) v *= 0.5;
    C(1, 4) = C(4, 1) = 0.9;
    const MergeMap m = match_greedy(C, 2, MatchConfig{});
    CHECK(m.merge_corr.front() == doctest::Approx(0.9));
    CHECK(std::find(m.groups.begin(), m.groups.end(), std::vector<int64_t>{1, 4}) != m.groups.end());
}

TEST_CASE("small alpha discourages growing merged features") {
    const CorrMatrix C = related_corr(5, 3, 2, 0.3);
    MatchConfig cfg;
    cfg.repeat_matches = true;
    cfg.beta = 0.0;
    cfg.alpha = 0.1;
    const MergeMap m = match_greedy(C, 3, cfg);
    CHECK(m.groups.size() == 5);
    CHECK(is_identity(matmul(m.M, m.U)));
    // The first merges are all between fresh features.
    for (size_t i = 0; i < 5; ++i) CHECK(m.merge_corr[i] > 0.5);
}

TEST_CASE("three models need repeated matches") {
    const CorrMatrix C = related_corr(5, 3, 2, 0.3);
    MatchConfig cfg;
    CHECK_THROWS_AS(match_greedy(C, 3, cfg), ConfigError);
    cfg.repeat_matches = true;
    cfg.beta = 0.0;
    cfg.alpha = 1.0;
    const MergeMap m = match_greedy(C, 3, cfg);
    CHECK(m.groups.size() == 5);
    CHECK(is_identity(matmul(m.M, m.U)));
    // The shared latents make every group one feature per model.
    for (const auto& g : m.groups) {
        REQUIRE(g.size() == 3);
        CHECK(g[0] / 5 == 0);
        CHECK(g[1] / 5 == 1);
        CHECK(g[2] / 5 == 2);
    }
}

TEST_CASE("k-means reaches a Lloyd fixed point on clustered features") {
    Rng rng(1);
    const int64_t n = 6, samples = 30;
    std::vector<std::vector<double>> latent(static_cast<size_t>(n), std::vector<double>(samples));
    for (auto& l : latent)
        for (auto& v : l) v = rng.normal();
    std::vector<FeatureMatrix> feats(2);
    for (int64_t m = 0; m < 2; ++m) {
        feats[m].samples = samples;
        feats[m].features = n;
        for (int64_t r = 0; r < samples; ++r)
            for (int64_t c = 0; c < n; ++c) {
                const int64_t src = m == 0 ? c : (c + 2) % n;
                feats[m].data.push_back(static_cast<float>(latent[src][r] + 0.05 * rng.normal()));
            }
    }
    const MergeMap m = match_kmeans(feats, MatchConfig{});
    CHECK(is_identity(matmul(m.M, m.U)));
    // Standardized points, then each point must be nearest its own centroid.
    std::vector<std::vector<double>> pts;
    for (int64_t m2 = 0; m2 < 2; ++m2)
        for (int64_t c = 0; c < n; ++c) {
            std::vector<double> col;
            for (int64_t r = 0; r < samples; ++r) col.push_back(feats[m2].at(r, c));
            double mean = std::accumulate(col.begin(), col.end(), 0.0) / samples, ss = 0;
            for (auto& v : col) ss += (v - mean) * (v - mean);
            const double sd = std::sqrt(ss / samples);
            for (auto& v : col) v = (v - mean) / sd;
            pts.push_back(col);
        }
    std::vector<std::vector<double>> centers;
    for (const auto& g : m.groups) {
        std::vector<double> c(samples, 0.0);
        for (auto i : g)
            for (int64_t r = 0; r < samples; ++r) c[r] += pts[i][r] / g.size();
        centers.push_back(c);
    }
    for (size_t gi = 0; gi < m.groups.size(); ++gi)
        for (auto i : m.groups[gi]) {
            auto dist = [&](const std::vector<double>& c) {
                double d = 0;
                for (int64_t r = 0; r < samples; ++r) d += (pts[i][r] - c[r]) * (pts[i][r] - c[r]);
                return d;
            };
            for (size_t o = 0; o < centers.size(); ++o) CHECK(dist(centers[gi]) <= dist(centers[o]) + 1e-9);
        }
    for (int64_t c = 0; c < n; ++c) {
        const std::vector<int64_t> want{c, n + (c - 2 + n) % n};
        std::vector<int64_t> sorted = want;
        std::sort(sorted.begin(), sorted.end());
        CHECK(std::find(m.groups.begin(), m.groups.end(), sorted) != m.groups.end());
    }
}

TEST_CASE("identity matching and helpers") {
    const MergeMap m = match_identity(3, 2);
    CHECK(m.groups == Groups{{0, 3}, {1, 4}, {2, 5}});
    CHECK(m.cross_merges == 3);
    const CorrMatrix C = random_corr(6, 1);
    CHECK(group_correlation(C, {1}) == 1.0);
    CHECK(group_correlation(C, {0, 3}) == C(0, 3));
    CHECK(algorithm_from_name("kmeans") == MatchAlgorithm::KMeans);
    CHECK_THROWS_AS(algorithm_from_name("random"), ConfigError);
    MatchConfig bad;
    bad.alpha = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    const auto rec = to_record(m, "relu1");
    CHECK(rec.point == "relu1");
    CHECK(rec.groups == m.groups);
}
