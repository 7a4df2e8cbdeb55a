#pragma once

#include <cmath>
#include <vector>

#include "zipit/data.hpp"
#include "zipit/graph.hpp"
#include "zipit/rng.hpp"
#include "zipit/tensor.hpp"
#include "zipit/train.hpp"

namespace testing {

using namespace zipit;

inline Tensor random_tensor(Shape shape, uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    Tensor t(std::move(shape));
    for (size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(scale * rng.normal());
    return t;
}

inline ModelGraph random_model(const std::string& arch, const Shape& sample, int64_t classes, uint64_t seed) {
    ModelGraph g = build_model(Arch::parse(arch), sample, classes);
    init_params(g, seed);
    return g;
}

inline Dataset random_probe(int64_t n, const Shape& sample, uint64_t seed) {
    Shape full{n};
    full.insert(full.end(), sample.begin(), sample.end());
    Dataset d;
    d.x = random_tensor(full, seed);
    d.classes = {0};
    d.y.assign(static_cast<size_t>(n), 0);
    return d;
}

// Plain triple loop in double.
inline std::vector<double> hand_matmul(const Tensor& a, const Tensor& b) {
    const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    std::vector<double> out(static_cast<size_t>(n * m), 0.0);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t j = 0; j < m; ++j)
            for (int64_t p = 0; p < k; ++p) out[i * m + j] += double(a.at(i, p)) * double(b.at(p, j));
    return out;
}

// Textbook two-pass Pearson correlation of two columns.
inline double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double mx = 0, my = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

inline double max_param_diff(const LayerNode& a, const LayerNode& b) {
    double d = 0;
    for (const auto& [name, t] : a.params) d = std::max(d, double(max_abs_diff(t, b.param(name))));
    return d;
}

}  // namespace testing
