#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "zipit/error.hpp"
#include "zipit/theorem.hpp"

using namespace zipit;

namespace {

double max_output_gap(const TwoLayerNet& a, const TwoLayerNet& b, const std::vector<double>& x) {
    double m = 0;
    for (size_t s = 0; s * a.d < x.size(); ++s) m = std::max(m, std::abs(a(x.data() + s * a.d) - b(x.data() + s * b.d)));
    return m;
}

// Direct evaluation of v^T relu(W x) with interpolated parameters.
double direct_barrier(const TwoLayerNet& a, const TwoLayerNet& b, const std::vector<double>& x,
                      const std::vector<double>& alphas) {
    double worst = 0;
    const int64_t n = static_cast<int64_t>(x.size()) / a.d;
    for (double al : alphas)
        for (int64_t s = 0; s < n; ++s) {
            const double* p = x.data() + s * a.d;
            double fi = 0, fa = 0, fb = 0;
            for (int64_t i = 0; i < a.h; ++i) {
                double zi = 0, za = 0, zb = 0;
                for (int64_t j = 0; j < a.d; ++j) {
                    const double wa = a.W[i * a.d + j], wb = b.W[i * a.d + j];
                    zi += (al * wa + (1 - al) * wb) * p[j];
                    za += wa * p[j];
                    zb += wb * p[j];
                }
                fi += (al * a.v[i] + (1 - al) * b.v[i]) * std::max(0.0, zi);
                fa += a.v[i] * std::max(0.0, za);
                fb += b.v[i] * std::max(0.0, zb);
            }
            worst = std::max(worst, std::abs(fi - al * fa - (1 - al) * fb));
        }
    return worst;
}

TwoLayerNet redundant_net(int64_t h, int64_t r, int64_t d, uint64_t seed, RedundancySpec& spec) {
    const TwoLayerNet core = sample_net(r, d, Distribution{}, seed);
    spec = random_redundancy(h, r, seed + 1);
    return make_redundant(core, spec, seed + 2);
}

}  // namespace

TEST_CASE("sampled nets are reproducible and bounded") {
    const TwoLayerNet a = sample_net(16, 4, Distribution{}, 3), b = sample_net(16, 4, Distribution{}, 3);
    CHECK(a.W == b.W);
    CHECK(a.v == b.v);
    CHECK(sample_net(16, 4, Distribution{}, 4).W != a.W);
    for (double w : a.W) CHECK(std::abs(w) <= 0.5);
    for (double v : a.v) CHECK(std::abs(v) <= 0.25);
    Distribution beta;
    beta.kind = Distribution::Kind::Beta;
    beta.a = 2;
    beta.b = 5;
    CHECK_THROWS_AS(sample_net(8, 4, Distribution{}, beta, 0), ConfigError);
    CHECK_NOTHROW(sample_net(8, 4, beta, Distribution{}, 0));
    CHECK_THROWS_AS(sample_net(0, 4, Distribution{}, 0), ConfigError);
}

TEST_CASE("truncated normal output weights are centered") {
    Distribution tn;
    tn.kind = Distribution::Kind::TruncatedNormal;
    const int64_t h = 20000;
    const TwoLayerNet net = sample_net(h, 2, Distribution{}, tn, 11);
    double mean = std::accumulate(net.v.begin(), net.v.end(), 0.0) / h, ss = 0;
    for (double v : net.v) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / (h - 1));
    CHECK(std::abs(mean) <= 3 * sd / std::sqrt(double(h)));
    for (double v : net.v) CHECK(std::abs(v) <= 1 / std::sqrt(double(h)));
}

TEST_CASE("zero-type rows preserve the function") {
    const auto x = sphere_probes(1000, 4, 5);
    for (size_t s = 0; s + 4 <= x.size(); s += 4)
        CHECK(x[s] * x[s] + x[s + 1] * x[s + 1] + x[s + 2] * x[s + 2] + x[s + 3] * x[s + 3] ==
              doctest::Approx(4.0));
    const TwoLayerNet core = sample_net(6, 4, Distribution{}, 1);
    SUBCASE("r = h leaves the net unchanged") {
        const RedundancySpec spec = random_redundancy(6, 6, 2);
        CHECK(spec.slots.empty());
        const TwoLayerNet same = make_redundant(core, spec, 3);
        CHECK(max_output_gap(reduce(same, spec), core, x) == 0.0);
    }
    SUBCASE("cancelling duplicate") {
        RedundancySpec spec;
        spec.h = 8;
        spec.r = 6;
        spec.core = {0, 1, 2, 3, 4, 5};
        spec.slots = {{ZeroSlot::Type::CancelPair, {6, 7}}};
        const TwoLayerNet big = make_redundant(core, spec, 4);
        CHECK(big.v[6] == -big.v[7]);
        CHECK(max_output_gap(big, core, x) <= 1e-12);
    }
    SUBCASE("zero output weight") {
        RedundancySpec spec;
        spec.h = 7;
        spec.r = 6;
        spec.core = {1, 2, 3, 4, 5, 6};
        spec.slots = {{ZeroSlot::Type::ZeroV, {0}}};
        const TwoLayerNet big = make_redundant(core, spec, 4);
        CHECK(big.v[0] == 0.0);
        CHECK(max_output_gap(big, core, x) <= 1e-12);
        CHECK(reduce(big, spec).W == core.W);
    }
    SUBCASE("random layouts") {
        for (uint64_t s = 0; s < 10; ++s) {
            const RedundancySpec spec = random_redundancy(20, 6, s);
            CHECK(max_output_gap(make_redundant(core, spec, s), core, x) <= 1e-6);
        }
    }
    CHECK_THROWS_AS(random_redundancy(4, 6, 0), ConfigError);
}

TEST_CASE("barrier basics") {
    const auto x = sphere_probes(1000, 4, 1);
    const auto alphas = alpha_grid(21);
    CHECK(alphas.size() == 21);
    const TwoLayerNet a = sample_net(16, 4, Distribution{}, 1), b = sample_net(16, 4, Distribution{}, 2);
    CHECK(barrier(a, a, x, alphas) <= 1e-12);
    CHECK(barrier(a, b, x, {0.0, 1.0}) <= 1e-15);
    const double bar = barrier(a, b, x, alphas);
    CHECK(bar > 0);
    CHECK(bar == doctest::Approx(direct_barrier(a, b, x, alphas)).epsilon(1e-12));
    CHECK(barrier(b, a, x, alphas) == doctest::Approx(bar).epsilon(1e-12));
    CHECK_THROWS_AS(barrier(a, b, {}, alphas), ConfigError);
    CHECK_THROWS_AS(barrier(a, sample_net(8, 4, Distribution{}, 2), x, alphas), ShapeError);
}

TEST_CASE("aligned pairs keep each net's function") {
    const auto x = sphere_probes(500, 4, 2);
    for (auto [r, rp] : std::vector<std::pair<int64_t, int64_t>>{{8, 8}, {6, 5}, {16, 16}, {5, 3}}) {
        RedundancySpec sa, sb;
        const TwoLayerNet a = redundant_net(16, r, 4, 10 + r, sa), b = redundant_net(16, rp, 4, 20 + rp, sb);
        const AlignedPair p = construct_T(a, sa, b, sb, x);
        CHECK(p.residual == std::max<int64_t>(0, r + rp - 16));
        CHECK(max_output_gap(p.a, a, x) <= 1e-12);
        CHECK(max_output_gap(p.b, b, x) <= 1e-12);
    }
}

TEST_CASE("zero branch: barrier vanishes when r + r' <= h") {
    for (auto [h, d] : std::vector<std::pair<int64_t, int64_t>>{{16, 4}, {64, 8}}) {
        const auto x = sphere_probes(1000, d, h);
        for (uint64_t s = 0; s < 3; ++s) {
            RedundancySpec sa, sb;
            const TwoLayerNet a = redundant_net(h, h / 2, d, s, sa), b = redundant_net(h, h / 2, d, s + 50, sb);
            const AlignedPair p = construct_T(a, sa, b, sb, x);
            CHECK(barrier(p.a, p.b, x, alpha_grid(21)) <= 1e-5);
        }
    }
}

TEST_CASE("no redundancy leaves a positive barrier") {
    const auto x = sphere_probes(1000, 4, 3);
    RedundancySpec sa, sb;
    const TwoLayerNet a = redundant_net(8, 8, 4, 1, sa), b = redundant_net(8, 8, 4, 2, sb);
    const AlignedPair p = construct_T(a, sa, b, sb, x);
    CHECK(p.residual == 8);
    CHECK(barrier(p.a, p.b, x, alpha_grid(21)) > 1e-3);
}

TEST_CASE("residual pairing against every alternative") {
    const auto x = sphere_probes(200, 4, 9);
    const auto alphas = alpha_grid(21);
    RedundancySpec sa, sb;
    const TwoLayerNet a = redundant_net(8, 6, 4, 3, sa), b = redundant_net(8, 5, 4, 4, sb);
    const AlignedPair greedy = construct_T(a, sa, b, sb, x);
    REQUIRE(greedy.residual == 3);
    const double g = barrier(greedy.a, greedy.b, x, alphas);
    CHECK(g == doctest::Approx(direct_barrier(greedy.a, greedy.b, x, alphas)).epsilon(1e-12));
    CHECK(g == barrier(construct_T_with_pairs(a, sa, b, sb, greedy.residual_pairs).a,
                       construct_T_with_pairs(a, sa, b, sb, greedy.residual_pairs).b, x, alphas));
    // All ways to choose 3 rows of A, 3 rows of B and match them.
    double best = 1e300;
    int count = 0;
    std::vector<int> ma{1, 1, 1, 0, 0, 0};
    do {
        std::vector<int> mb{1, 1, 1, 0, 0};
        do {
            std::vector<int64_t> ra, rb;
            for (int i = 0; i < 6; ++i)
                if (ma[i]) ra.push_back(i);
            for (int j = 0; j < 5; ++j)
                if (mb[j]) rb.push_back(j);
            do {
                std::vector<std::pair<int64_t, int64_t>> pairs;
                for (int t = 0; t < 3; ++t) pairs.emplace_back(ra[t], rb[t]);
                const AlignedPair p = construct_T_with_pairs(a, sa, b, sb, pairs);
                best = std::min(best, barrier(p.a, p.b, x, alphas));
                ++count;
            } while (std::next_permutation(rb.begin(), rb.end()));
        } while (std::prev_permutation(mb.begin(), mb.end()));
    } while (std::prev_permutation(ma.begin(), ma.end()));
    CHECK(count == 20 * 10 * 6);
    CHECK(best <= g);
    CHECK(best > 0);
    MESSAGE("greedy residual barrier " << g << ", best of " << count << " pairings " << best);
    const AlignedPair ex = construct_T(a, sa, b, sb, x, ResidualPairing::Exhaustive);
    CHECK(barrier(ex.a, ex.b, x, alphas) == best);
    RedundancySpec sc, sd;
    const TwoLayerNet c = redundant_net(32, 32, 4, 5, sc), dnet = redundant_net(32, 32, 4, 6, sd);
    CHECK_THROWS_AS(construct_T(c, sc, dnet, sd, x, ResidualPairing::Exhaustive), ConfigError);
    CHECK_THROWS_AS(construct_T_with_pairs(a, sa, b, sb, {{0, 0}}), ConfigError);
}

TEST_CASE("width trend rows and table") {
    TrendConfig cfg;
    cfg.seeds = {0, 1, 2};
    cfg.probes = 200;
    const auto rows = width_trend({8}, cfg);
    REQUIRE(rows.size() == 1);
    CHECK(rows[0].h == 8);
    CHECK(rows[0].median_barrier <= rows[0].max_barrier);
    cfg.redundancy = 0.5;
    for (const auto& r : width_trend({8, 16, 32}, cfg)) CHECK(r.max_barrier <= 1e-5);
    CHECK(theorem_table(rows).str().rfind("h,d,r,r_prime,median_barrier,max_barrier\n8,4,8,8,", 0) == 0);
    CHECK_THROWS_AS(width_trend({16, 8}, cfg), ConfigError);
}
