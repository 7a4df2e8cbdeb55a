#pragma once

#include <cstdint>
#include <vector>

#include "zipit/csv.hpp"
#include "zipit/rng.hpp"

namespace zipit {

// f(x) = v^T relu(W x), kept in double.
struct TwoLayerNet {
    int64_t h = 0, d = 0;
    std::vector<double> W;  // h x d row-major
    std::vector<double> v;  // h

    double operator()(const double* x) const;
    const double* row(int64_t i) const { return W.data() + i * d; }
};

struct Distribution {
    enum class Kind { Uniform, TruncatedNormal, Beta };
    Kind kind = Kind::Uniform;
    double sigma = 0.5;     // truncated normal: std as a fraction of the bound
    double a = 2.0, b = 2.0;  // beta shape, mapped onto [-bound, bound]

    bool centered() const;
    double sample(Rng& rng, double bound) const;
};

// W from `dist` on [-1/sqrt(d), 1/sqrt(d)], v from `vdist` on
// [-1/sqrt(h), 1/sqrt(h)]. vdist must be centered.
TwoLayerNet sample_net(int64_t h, int64_t d, const Distribution& dist, uint64_t seed);
TwoLayerNet sample_net(int64_t h, int64_t d, const Distribution& dist, const Distribution& vdist, uint64_t seed);

struct ZeroSlot {
    enum class Type { ZeroV, CancelPair };
    Type type = Type::ZeroV;
    std::vector<int64_t> positions;  // one row, or two identical rows for a cancel pair
};

// Layout of a width-h net holding a width-r core plus h - r zero-type rows.
struct RedundancySpec {
    int64_t h = 0, r = 0;
    std::vector<int64_t> core;    // position of core row i
    std::vector<ZeroSlot> slots;  // cover the other h - r positions

    void validate() const;
};

// Random layout: cancel pairs while two or more free rows remain (when
// `pairs` is set), zero-v rows otherwise.
RedundancySpec random_redundancy(int64_t h, int64_t r, uint64_t seed, bool pairs = true);

// Expands a width-r net to width h per spec. Filler rows are drawn from seed.
TwoLayerNet make_redundant(const TwoLayerNet& core, const RedundancySpec& spec, uint64_t seed);
// The width-r core back out of a redundant net.
TwoLayerNet reduce(const TwoLayerNet& net, const RedundancySpec& spec);

// Points on the radius-sqrt(d) sphere, row-major n x d.
std::vector<double> sphere_probes(int64_t n, int64_t d, uint64_t seed);
std::vector<double> alpha_grid(int64_t points = 21);

// max over alpha and x of |f_interp(x) - alpha f_A(x) - (1 - alpha) f_B(x)|.
double barrier(const TwoLayerNet& a, const TwoLayerNet& b_aligned, const std::vector<double>& probes,
               const std::vector<double>& alphas);

struct AlignedPair {
    TwoLayerNet a, b;
    int64_t residual = 0;                                 // (r + r') - h
    std::vector<std::pair<int64_t, int64_t>> residual_pairs;  // (core row of A, core row of B)
};

enum class ResidualPairing {
    Greedy,      // highest activation correlation first
    Exhaustive,  // lowest barrier over every choice; small cases only
};
inline constexpr double kMaxExhaustivePairings = 2e5;

// Aligned width-h copies of two redundant nets: each net's core rows sit
// opposite zero-v copies in the other net. When r + r' > h, r + r' - h core
// rows of each net have to share positions; `pairing` picks which.
AlignedPair construct_T(const TwoLayerNet& a, const RedundancySpec& sa, const TwoLayerNet& b,
                        const RedundancySpec& sb, const std::vector<double>& probes,
                        ResidualPairing pairing = ResidualPairing::Greedy, int64_t alpha_points = 21);
// Same layout with explicitly chosen residual pairs.
AlignedPair construct_T_with_pairs(const TwoLayerNet& a, const RedundancySpec& sa, const TwoLayerNet& b,
                                   const RedundancySpec& sb, const std::vector<std::pair<int64_t, int64_t>>& pairs);

// Greedy highest-correlation disjoint pairs between rows of A and rows of B.
std::vector<std::pair<int64_t, int64_t>> greedy_row_pairs(const TwoLayerNet& a, const TwoLayerNet& b,
                                                          const std::vector<double>& probes, int64_t count);

struct TheoremRow {
    int64_t h, d, r, r_prime;
    double median_barrier, max_barrier;
};

struct TrendConfig {
    int64_t d = 4;
    std::vector<uint64_t> seeds;
    double redundancy = 1.0;  // r / h for both nets; 1 means plain greedy alignment
    int64_t probes = 1000;
    int64_t alpha_points = 21;
    Distribution dist;
};

std::vector<TheoremRow> width_trend(const std::vector<int64_t>& h_list, const TrendConfig& cfg);
CsvTable theorem_table(const std::vector<TheoremRow>& rows);

}  // namespace zipit
