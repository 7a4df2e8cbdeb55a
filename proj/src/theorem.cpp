#include "zipit/theorem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "zipit/error.hpp"

namespace zipit {

namespace {

constexpr uint64_t kWStream = 0x57ull, kVStream = 0x56ull, kFillStream = 0x66696c6cull;

// Marsaglia-Tsang, shape >= 1 (boosted below 1).
double gamma_variate(Rng& rng, double shape) {
    if (shape < 1.0) {
        const double u = rng.uniform();
        return gamma_variate(rng, shape + 1.0) * std::pow(u > 0 ? u : 1e-300, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0, c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
        double x, v;
        do {
            x = rng.normal();
            v = 1.0 + c * x;
        } while (v <= 0.0);
        v = v * v * v;
        const double u = rng.uniform();
        if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
        if (u > 0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v;
    }
}

std::vector<double> activations(const TwoLayerNet& net, int64_t i, const std::vector<double>& probes) {
    const int64_t n = static_cast<int64_t>(probes.size()) / net.d;
    std::vector<double> out(static_cast<size_t>(n));
    for (int64_t s = 0; s < n; ++s) {
        double z = 0.0;
        for (int64_t j = 0; j < net.d; ++j) z += net.W[i * net.d + j] * probes[s * net.d + j];
        out[s] = std::max(z, 0.0);
    }
    return out;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

void set_row(TwoLayerNet& net, int64_t pos, const double* w, double v) {
    std::copy(w, w + net.d, net.W.begin() + pos * net.d);
    net.v[pos] = v;
}

}  // namespace

double TwoLayerNet::operator()(const double* x) const {
    double y = 0.0;
    for (int64_t i = 0; i < h; ++i) {
        double z = 0.0;
        for (int64_t j = 0; j < d; ++j) z += W[i * d + j] * x[j];
        if (z > 0.0) y += v[i] * z;
    }
    return y;
}

bool Distribution::centered() const { return kind != Kind::Beta || a == b; }

double Distribution::sample(Rng& rng, double bound) const {
    switch (kind) {
    case Kind::Uniform: return rng.uniform(-bound, bound);
    case Kind::TruncatedNormal:
        for (;;) {
            const double z = rng.normal() * sigma * bound;
            if (std::abs(z) <= bound) return z;
        }
    case Kind::Beta: {
        const double g1 = gamma_variate(rng, a), g2 = gamma_variate(rng, b);
        return bound * (2.0 * g1 / (g1 + g2) - 1.0);
    }
    }
    return 0.0;
}

TwoLayerNet sample_net(int64_t h, int64_t d, const Distribution& dist, uint64_t seed) {
    return sample_net(h, d, dist, dist, seed);
}

TwoLayerNet sample_net(int64_t h, int64_t d, const Distribution& dist, const Distribution& vdist, uint64_t seed) {
    if (h < 1 || d < 1) throw ConfigError("network dims must be positive");
    if (!vdist.centered()) throw ConfigError("the output-weight distribution must be centered (beta needs a == b)");
    if (dist.kind == Distribution::Kind::Beta && (dist.a <= 0 || dist.b <= 0))
        throw ConfigError("beta shape parameters must be positive");
    if (dist.kind == Distribution::Kind::TruncatedNormal && !(dist.sigma > 0)) throw ConfigError("sigma must be positive");
    TwoLayerNet net;
    net.h = h;
    net.d = d;
    Rng rw(Rng::mix({seed, kWStream})), rv(Rng::mix({seed, kVStream}));
    const double bw = 1.0 / std::sqrt(static_cast<double>(d)), bv = 1.0 / std::sqrt(static_cast<double>(h));
    net.W.resize(static_cast<size_t>(h * d));
    for (auto& w : net.W) w = dist.sample(rw, bw);
    net.v.resize(static_cast<size_t>(h));
    for (auto& v : net.v) v = vdist.sample(rv, bv);
    return net;
}

void RedundancySpec::validate() const {
    if (r < 1 || r > h) throw ConfigError("redundancy needs 1 <= r <= h (r=" + std::to_string(r) + ", h=" + std::to_string(h) + ")");
    if (static_cast<int64_t>(core.size()) != r) throw ConfigError("core layout does not have r rows");
    std::vector<int> seen(static_cast<size_t>(h), 0);
    auto mark = [&](int64_t p) {
        if (p < 0 || p >= h) throw ConfigError("redundancy position out of range");
        if (seen[p]++) throw ConfigError("redundancy position " + std::to_string(p) + " used twice");
    };
    for (auto p : core) mark(p);
    for (const auto& s : slots) {
        const size_t want = s.type == ZeroSlot::Type::ZeroV ? 1 : 2;
        if (s.positions.size() != want) throw ConfigError("zero-type slot has the wrong number of rows");
        for (auto p : s.positions) mark(p);
    }
    for (int64_t p = 0; p < h; ++p)
        if (!seen[p]) throw ConfigError("redundancy layout leaves position " + std::to_string(p) + " unassigned");
}

RedundancySpec random_redundancy(int64_t h, int64_t r, uint64_t seed, bool pairs) {
    if (r < 1 || r > h) throw ConfigError("redundancy needs 1 <= r <= h");
    RedundancySpec s;
    s.h = h;
    s.r = r;
    std::vector<int64_t> pos(static_cast<size_t>(h));
    std::iota(pos.begin(), pos.end(), 0);
    Rng rng(seed);
    rng.shuffle(pos.begin(), pos.end());
    s.core.assign(pos.begin(), pos.begin() + r);
    size_t i = static_cast<size_t>(r);
    while (i < pos.size()) {
        if (pairs && i + 1 < pos.size()) {
            s.slots.push_back({ZeroSlot::Type::CancelPair, {pos[i], pos[i + 1]}});
            i += 2;
        } else {
            s.slots.push_back({ZeroSlot::Type::ZeroV, {pos[i]}});
            ++i;
        }
    }
    s.validate();
    return s;
}

TwoLayerNet make_redundant(const TwoLayerNet& core, const RedundancySpec& spec, uint64_t seed) {
    spec.validate();
    if (core.h != spec.r) throw ConfigError("core width " + std::to_string(core.h) + " differs from r=" + std::to_string(spec.r));
    TwoLayerNet net;
    net.h = spec.h;
    net.d = core.d;
    net.W.assign(static_cast<size_t>(net.h * net.d), 0.0);
    net.v.assign(static_cast<size_t>(net.h), 0.0);
    for (int64_t i = 0; i < spec.r; ++i) set_row(net, spec.core[i], core.row(i), core.v[i]);
    Rng rng(Rng::mix({seed, kFillStream}));
    const double bw = 1.0 / std::sqrt(static_cast<double>(net.d)), bv = 1.0 / std::sqrt(static_cast<double>(net.h));
    std::vector<double> w(static_cast<size_t>(net.d));
    for (const auto& s : spec.slots) {
        for (auto& x : w) x = rng.uniform(-bw, bw);
        if (s.type == ZeroSlot::Type::ZeroV) {
            set_row(net, s.positions[0], w.data(), 0.0);
        } else {
            const double a = rng.uniform(-bv, bv);
            set_row(net, s.positions[0], w.data(), a);
            set_row(net, s.positions[1], w.data(), -a);
        }
    }
    return net;
}

TwoLayerNet reduce(const TwoLayerNet& net, const RedundancySpec& spec) {
    spec.validate();
    if (net.h != spec.h) throw ConfigError("net width differs from the redundancy layout");
    TwoLayerNet core;
    core.h = spec.r;
    core.d = net.d;
    core.W.resize(static_cast<size_t>(core.h * core.d));
    core.v.resize(static_cast<size_t>(core.h));
    for (int64_t i = 0; i < spec.r; ++i) set_row(core, i, net.row(spec.core[i]), net.v[spec.core[i]]);
    return core;
}

std::vector<double> sphere_probes(int64_t n, int64_t d, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> x(static_cast<size_t>(n * d));
    for (int64_t s = 0; s < n; ++s) {
        double norm = 0.0;
        do {
            norm = 0.0;
            for (int64_t j = 0; j < d; ++j) {
                x[s * d + j] = rng.normal();
                norm += x[s * d + j] * x[s * d + j];
            }
        } while (norm == 0.0);
        const double k = std::sqrt(static_cast<double>(d) / norm);
        for (int64_t j = 0; j < d; ++j) x[s * d + j] *= k;
    }
    return x;
}

std::vector<double> alpha_grid(int64_t points) {
    if (points < 2) throw ConfigError("alpha grid needs at least 2 points");
    std::vector<double> g;
    for (int64_t i = 0; i < points; ++i) g.push_back(static_cast<double>(i) / static_cast<double>(points - 1));
    return g;
}

double barrier(const TwoLayerNet& a, const TwoLayerNet& b, const std::vector<double>& probes,
               const std::vector<double>& alphas) {
    if (probes.empty() || alphas.empty()) throw ConfigError("barrier needs probes and an alpha grid");
    if (a.h != b.h || a.d != b.d) throw ShapeError("barrier: networks differ in shape");
    const int64_t n = static_cast<int64_t>(probes.size()) / a.d;
    double worst = 0.0;
    TwoLayerNet mix = a;
    for (double al : alphas) {
        for (size_t i = 0; i < mix.W.size(); ++i) mix.W[i] = al * a.W[i] + (1 - al) * b.W[i];
        for (size_t i = 0; i < mix.v.size(); ++i) mix.v[i] = al * a.v[i] + (1 - al) * b.v[i];
        for (int64_t s = 0; s < n; ++s) {
            const double* x = probes.data() + s * a.d;
            worst = std::max(worst, std::abs(mix(x) - al * a(x) - (1 - al) * b(x)));
        }
    }
    return worst;
}

std::vector<std::pair<int64_t, int64_t>> greedy_row_pairs(const TwoLayerNet& a, const TwoLayerNet& b,
                                                          const std::vector<double>& probes, int64_t count) {
    std::vector<std::vector<double>> fa, fb;
    for (int64_t i = 0; i < a.h; ++i) fa.push_back(activations(a, i, probes));
    for (int64_t j = 0; j < b.h; ++j) fb.push_back(activations(b, j, probes));
    struct Cand {
        double c;
        int64_t i, j;
    };
    std::vector<Cand> cands;
    for (int64_t i = 0; i < a.h; ++i)
        for (int64_t j = 0; j < b.h; ++j) cands.push_back({pearson(fa[i], fb[j]), i, j});
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& x, const Cand& y) { return x.c > y.c; });
    std::vector<char> ua(static_cast<size_t>(a.h), 0), ub(static_cast<size_t>(b.h), 0);
    std::vector<std::pair<int64_t, int64_t>> out;
    for (const auto& c : cands) {
        if (static_cast<int64_t>(out.size()) == count) break;
        if (ua[c.i] || ub[c.j]) continue;
        ua[c.i] = ub[c.j] = 1;
        out.emplace_back(c.i, c.j);
    }
    std::sort(out.begin(), out.end());
    return out;
}

AlignedPair construct_T_with_pairs(const TwoLayerNet& a, const RedundancySpec& sa, const TwoLayerNet& b,
                                   const RedundancySpec& sb, const std::vector<std::pair<int64_t, int64_t>>& pairs) {
    if (a.h != b.h || a.d != b.d || sa.h != a.h || sb.h != b.h) throw ShapeError("construct_T: widths disagree");
    const TwoLayerNet ca = reduce(a, sa), cb = reduce(b, sb);
    const int64_t h = a.h, r = ca.h, rp = cb.h;
    const int64_t residual = std::max<int64_t>(0, r + rp - h);
    if (static_cast<int64_t>(pairs.size()) != residual)
        throw ConfigError("construct_T: expected " + std::to_string(residual) + " residual pairs, got " +
                          std::to_string(pairs.size()));
    std::vector<char> pa(static_cast<size_t>(r), 0), pb(static_cast<size_t>(rp), 0);
    for (auto [i, j] : pairs) {
        if (i < 0 || i >= r || j < 0 || j >= rp || pa[i] || pb[j]) throw ConfigError("construct_T: bad residual pairing");
        pa[i] = pb[j] = 1;
    }
    AlignedPair out;
    out.residual = residual;
    out.residual_pairs = pairs;
    out.a.h = out.b.h = h;
    out.a.d = out.b.d = a.d;
    out.a.W.assign(static_cast<size_t>(h * a.d), 0.0);
    out.b.W = out.a.W;
    out.a.v.assign(static_cast<size_t>(h), 0.0);
    out.b.v = out.a.v;
    int64_t pos = 0;
    for (auto [i, j] : pairs) {
        set_row(out.a, pos, ca.row(i), ca.v[i]);
        set_row(out.b, pos, cb.row(j), cb.v[j]);
        ++pos;
    }
    // Unpaired core rows face a zero-v copy of themselves in the other net.
    for (int64_t i = 0; i < r; ++i) {
        if (pa[i]) continue;
        set_row(out.a, pos, ca.row(i), ca.v[i]);
        set_row(out.b, pos, ca.row(i), 0.0);
        ++pos;
    }
    for (int64_t j = 0; j < rp; ++j) {
        if (pb[j]) continue;
        set_row(out.a, pos, cb.row(j), 0.0);
        set_row(out.b, pos, cb.row(j), cb.v[j]);
        ++pos;
    }
    // Leftover positions: identical rows with v = 0 in both nets.
    for (; pos < h; ++pos) {
        set_row(out.a, pos, ca.row(0), 0.0);
        set_row(out.b, pos, ca.row(0), 0.0);
    }
    return out;
}

namespace {

double pairing_count(int64_t r, int64_t rp, int64_t m) {
    auto choose = [](int64_t n, int64_t k) {
        double c = 1.0;
        for (int64_t i = 0; i < k; ++i) c = c * static_cast<double>(n - i) / static_cast<double>(i + 1);
        return c;
    };
    double f = 1.0;
    for (int64_t i = 2; i <= m; ++i) f *= static_cast<double>(i);
    return choose(r, m) * choose(rp, m) * f;
}

std::vector<std::pair<int64_t, int64_t>> best_row_pairs(const TwoLayerNet& a, const RedundancySpec& sa,
                                                        const TwoLayerNet& b, const RedundancySpec& sb,
                                                        const std::vector<double>& probes, int64_t count,
                                                        const std::vector<double>& alphas) {
    const int64_t r = sa.r, rp = sb.r;
    if (pairing_count(r, rp, count) > kMaxExhaustivePairings)
        throw ConfigError("exhaustive residual pairing over " + std::to_string(count) + " rows is too large");
    std::vector<std::pair<int64_t, int64_t>> best_pairs;
    double best = std::numeric_limits<double>::infinity();
    std::vector<char> pick_a(static_cast<size_t>(r), 0), pick_b(static_cast<size_t>(rp), 0);
    std::fill(pick_a.begin(), pick_a.begin() + count, 1);
    do {
        std::fill(pick_b.begin(), pick_b.end(), 0);
        std::fill(pick_b.begin(), pick_b.begin() + count, 1);
        do {
            std::vector<int64_t> ra, rb;
            for (int64_t i = 0; i < r; ++i)
                if (pick_a[i]) ra.push_back(i);
            for (int64_t j = 0; j < rp; ++j)
                if (pick_b[j]) rb.push_back(j);
            do {
                std::vector<std::pair<int64_t, int64_t>> pairs;
                for (int64_t t = 0; t < count; ++t) pairs.emplace_back(ra[t], rb[t]);
                const AlignedPair p = construct_T_with_pairs(a, sa, b, sb, pairs);
                const double v = barrier(p.a, p.b, probes, alphas);
                if (v < best) {
                    best = v;
                    best_pairs = pairs;
                }
            } while (std::next_permutation(rb.begin(), rb.end()));
        } while (std::prev_permutation(pick_b.begin(), pick_b.end()));
    } while (std::prev_permutation(pick_a.begin(), pick_a.end()));
    std::sort(best_pairs.begin(), best_pairs.end());
    return best_pairs;
}

}  // namespace

AlignedPair construct_T(const TwoLayerNet& a, const RedundancySpec& sa, const TwoLayerNet& b,
                        const RedundancySpec& sb, const std::vector<double>& probes, ResidualPairing pairing,
                        int64_t alpha_points) {
    const int64_t residual = std::max<int64_t>(0, sa.r + sb.r - a.h);
    std::vector<std::pair<int64_t, int64_t>> pairs;
    if (residual > 0) {
        if (pairing == ResidualPairing::Greedy)
            pairs = greedy_row_pairs(reduce(a, sa), reduce(b, sb), probes, residual);
        else
            pairs = best_row_pairs(a, sa, b, sb, probes, residual, alpha_grid(alpha_points));
    }
    return construct_T_with_pairs(a, sa, b, sb, pairs);
}

std::vector<TheoremRow> width_trend(const std::vector<int64_t>& h_list, const TrendConfig& cfg) {
    if (h_list.empty()) throw ConfigError("width list is empty");
    if (cfg.seeds.empty()) throw ConfigError("width trend needs seeds");
    if (!(cfg.redundancy > 0.0 && cfg.redundancy <= 1.0)) throw ConfigError("redundancy must lie in (0,1]");
    for (size_t i = 1; i < h_list.size(); ++i)
        if (h_list[i] <= h_list[i - 1]) throw ConfigError("widths must be increasing");
    const auto alphas = alpha_grid(cfg.alpha_points);
    std::vector<TheoremRow> rows;
    for (auto h : h_list) {
        const int64_t r = std::max<int64_t>(1, static_cast<int64_t>(std::llround(cfg.redundancy * static_cast<double>(h))));
        std::vector<double> bars;
        for (auto seed : cfg.seeds) {
            const auto probes = sphere_probes(cfg.probes, cfg.d, Rng::mix({seed, static_cast<uint64_t>(h), 1}));
            TwoLayerNet nets[2];
            RedundancySpec specs[2];
            for (uint64_t m = 0; m < 2; ++m) {
                const TwoLayerNet full = sample_net(h, cfg.d, cfg.dist, Rng::mix({seed, static_cast<uint64_t>(h), m, 2}));
                specs[m] = random_redundancy(h, r, Rng::mix({seed, static_cast<uint64_t>(h), m, 3}));
                TwoLayerNet core = full;
                core.h = r;
                core.W.resize(static_cast<size_t>(r * cfg.d));
                core.v.resize(static_cast<size_t>(r));
                nets[m] = make_redundant(core, specs[m], Rng::mix({seed, static_cast<uint64_t>(h), m, 4}));
            }
            const AlignedPair p = construct_T(nets[0], specs[0], nets[1], specs[1], probes);
            bars.push_back(barrier(p.a, p.b, probes, alphas));
        }
        std::vector<double> sorted = bars;
        std::sort(sorted.begin(), sorted.end());
        const size_t m = sorted.size();
        const double median = m % 2 ? sorted[m / 2] : 0.5 * (sorted[m / 2 - 1] + sorted[m / 2]);
        rows.push_back({h, cfg.d, r, r, median, sorted.back()});
    }
    return rows;
}

CsvTable theorem_table(const std::vector<TheoremRow>& rows) {
    CsvTable t;
    t.header = {"h", "d", "r", "r_prime", "median_barrier", "max_barrier"};
    for (const auto& r : rows)
        t.add({std::to_string(r.h), std::to_string(r.d), std::to_string(r.r), std::to_string(r.r_prime),
               csv_number(r.median_barrier, 9), csv_number(r.max_barrier, 9)});
    return t;
}

}  // namespace zipit
