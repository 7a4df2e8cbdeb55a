#include "kernels.hpp"

#include <cmath>
#include <limits>

#include "zipit/error.hpp"

namespace zipit::kernels {

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
    const int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor y({n, out});
    for (int64_t r = 0; r < n; ++r) {
        const float* xr = x.raw() + r * in;
        for (int64_t o = 0; o < out; ++o) {
            const float* wr = w.raw() + o * in;
            double acc = b[o];
            for (int64_t i = 0; i < in; ++i) acc += static_cast<double>(xr[i]) * wr[i];
            y.at(r, o) = static_cast<float>(acc);
        }
    }
    return y;
}

Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db) {
    const int64_t n = x.dim(0), in = x.dim(1), out = w.dim(0);
    Tensor dx({n, in});
    for (int64_t r = 0; r < n; ++r) {
        const float* g = dy.raw() + r * out;
        const float* xr = x.raw() + r * in;
        float* dxr = dx.raw() + r * in;
        for (int64_t o = 0; o < out; ++o) {
            const float go = g[o];
            if (go == 0.0f) continue;
            const float* wr = w.raw() + o * in;
            for (int64_t i = 0; i < in; ++i) dxr[i] += go * wr[i];
            if (dw) {
                float* dwr = dw->raw() + o * in;
                for (int64_t i = 0; i < in; ++i) dwr[i] += go * xr[i];
            }
            if (db) (*db)[o] += go;
        }
    }
    return dx;
}

namespace {

// Patch matrix [c*k*k, ho*wo] of one sample, zero where the window leaves the image.
void im2col(const float* x, int64_t c, int64_t h, int64_t wd, int64_t k, int64_t stride, int64_t pad, int64_t ho,
            int64_t wo, std::vector<float>& cols) {
    const int64_t T = ho * wo;
    cols.assign(static_cast<size_t>(c * k * k * T), 0.0f);
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < k; ++p)
            for (int64_t q = 0; q < k; ++q) {
                float* dst = cols.data() + ((ci * k + p) * k + q) * T;
                for (int64_t i = 0; i < ho; ++i) {
                    const int64_t yi = i * stride + p - pad;
                    if (yi < 0 || yi >= h) continue;
                    for (int64_t j = 0; j < wo; ++j) {
                        const int64_t xj = j * stride + q - pad;
                        if (xj >= 0 && xj < wd) dst[i * wo + j] = x[(ci * h + yi) * wd + xj];
                    }
                }
            }
}

void col2im(const std::vector<float>& cols, int64_t c, int64_t h, int64_t wd, int64_t k, int64_t stride, int64_t pad,
            int64_t ho, int64_t wo, float* x) {
    const int64_t T = ho * wo;
    for (int64_t ci = 0; ci < c; ++ci)
        for (int64_t p = 0; p < k; ++p)
            for (int64_t q = 0; q < k; ++q) {
                const float* src = cols.data() + ((ci * k + p) * k + q) * T;
                for (int64_t i = 0; i < ho; ++i) {
                    const int64_t yi = i * stride + p - pad;
                    if (yi < 0 || yi >= h) continue;
                    for (int64_t j = 0; j < wo; ++j) {
                        const int64_t xj = j * stride + q - pad;
                        if (xj >= 0 && xj < wd) x[(ci * h + yi) * wd + xj] += src[i * wo + j];
                    }
                }
            }
}

}  // namespace

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t oc = w.dim(0), k = w.dim(2);
    const int64_t ho = (h + 2 * pad - k) / stride + 1, wo = (wd + 2 * pad - k) / stride + 1;
    const int64_t R = c * k * k, T = ho * wo;
    Tensor y({n, oc, ho, wo});
    std::vector<float> cols;
    std::vector<double> acc(static_cast<size_t>(T));
    for (int64_t s = 0; s < n; ++s) {
        im2col(x.raw() + s * c * h * wd, c, h, wd, k, stride, pad, ho, wo, cols);
        for (int64_t o = 0; o < oc; ++o) {
            std::fill(acc.begin(), acc.end(), static_cast<double>(b[o]));
            const float* wr = w.raw() + o * R;
            for (int64_t r = 0; r < R; ++r) {
                const double wv = wr[r];
                const float* cr = cols.data() + r * T;
                for (int64_t t = 0; t < T; ++t) acc[t] += wv * cr[t];
            }
            float* yo = y.raw() + (s * oc + o) * T;
            for (int64_t t = 0; t < T; ++t) yo[t] = static_cast<float>(acc[t]);
        }
    }
    return y;
}

Tensor conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int64_t stride, int64_t pad, Tensor* dw,
                     Tensor* db) {
    const int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const int64_t oc = w.dim(0), k = w.dim(2);
    const int64_t ho = dy.dim(2), wo = dy.dim(3);
    const int64_t R = c * k * k, T = ho * wo;
    Tensor dx(x.shape());
    std::vector<float> cols, dcols;
    for (int64_t s = 0; s < n; ++s) {
        im2col(x.raw() + s * c * h * wd, c, h, wd, k, stride, pad, ho, wo, cols);
        dcols.assign(static_cast<size_t>(R * T), 0.0f);
        for (int64_t o = 0; o < oc; ++o) {
            const float* g = dy.raw() + (s * oc + o) * T;
            const float* wr = w.raw() + o * R;
            float* dwr = dw ? dw->raw() + o * R : nullptr;
            if (db) {
                float gs = 0.0f;
                for (int64_t t = 0; t < T; ++t) gs += g[t];
                (*db)[o] += gs;
            }
            for (int64_t r = 0; r < R; ++r) {
                const float* cr = cols.data() + r * T;
                float* dr = dcols.data() + r * T;
                const float wv = wr[r];
                float gw = 0.0f;
                for (int64_t t = 0; t < T; ++t) {
                    dr[t] += wv * g[t];
                    gw += g[t] * cr[t];
                }
                if (dwr) dwr[r] += gw;
            }
        }
        col2im(dcols, c, h, wd, k, stride, pad, ho, wo, dx.raw() + s * c * h * wd);
    }
    return dx;
}

void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var) {
    const int64_t n = x.dim(0), c = x.dim(1), sp = spatial_size(x);
    const double count = static_cast<double>(n * sp);
    mean.assign(static_cast<size_t>(c), 0.0);
    var.assign(static_cast<size_t>(c), 0.0);
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ci = 0; ci < c; ++ci) {
            const float* p = x.raw() + (s * c + ci) * sp;
            for (int64_t t = 0; t < sp; ++t) mean[ci] += p[t];
        }
    for (auto& m : mean) m /= count;
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ci = 0; ci < c; ++ci) {
            const float* p = x.raw() + (s * c + ci) * sp;
            for (int64_t t = 0; t < sp; ++t) {
                const double d = p[t] - mean[ci];
                var[ci] += d * d;
            }
        }
    for (auto& v : var) v /= count;
}

Tensor batchnorm_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const std::vector<double>& mean,
                         const std::vector<double>& var, double eps, NormCache* cache) {
    const int64_t n = x.dim(0), c = x.dim(1), sp = spatial_size(x);
    Tensor y(x.shape());
    std::vector<double> inv(static_cast<size_t>(c));
    for (int64_t ci = 0; ci < c; ++ci) inv[ci] = 1.0 / std::sqrt(var[ci] + eps);
    if (cache) {
        cache->mean = mean;
        cache->inv_std = inv;
        cache->xhat = Tensor(x.shape());
    }
    for (int64_t s = 0; s < n; ++s)
        for (int64_t ci = 0; ci < c; ++ci) {
            const size_t off = static_cast<size_t>((s * c + ci) * sp);
            for (int64_t t = 0; t < sp; ++t) {
                const double xh = (x[off + t] - mean[ci]) * inv[ci];
                if (cache) cache->xhat[off + t] = static_cast<float>(xh);
                y[off + t] = static_cast<float>(xh * weight[ci] + bias[ci]);
            }
        }
    return y;
}

Tensor batchnorm_backward(const Tensor& dy, const Tensor& weight, const NormCache& cache, Tensor* dw, Tensor* db) {
    const int64_t n = dy.dim(0), c = dy.dim(1), sp = spatial_size(dy);
    const double m = static_cast<double>(n * sp);
    Tensor dx(dy.shape());
    for (int64_t ci = 0; ci < c; ++ci) {
        double sum_g = 0.0, sum_gx = 0.0;
        for (int64_t s = 0; s < n; ++s) {
            const size_t off = static_cast<size_t>((s * c + ci) * sp);
            for (int64_t t = 0; t < sp; ++t) {
                sum_g += dy[off + t];
                sum_gx += static_cast<double>(dy[off + t]) * cache.xhat[off + t];
            }
        }
        if (dw) (*dw)[ci] += static_cast<float>(sum_gx);
        if (db) (*db)[ci] += static_cast<float>(sum_g);
        const double scale = weight[ci] * cache.inv_std[ci] / m;
        for (int64_t s = 0; s < n; ++s) {
            const size_t off = static_cast<size_t>((s * c + ci) * sp);
            for (int64_t t = 0; t < sp; ++t)
                dx[off + t] = static_cast<float>(scale * (m * dy[off + t] - sum_g - cache.xhat[off + t] * sum_gx));
        }
    }
    return dx;
}

// LayerNorm normalizes across channels independently at every (sample, location).
Tensor layernorm_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps, NormCache* cache) {
    const int64_t n = x.dim(0), c = x.dim(1), sp = spatial_size(x);
    Tensor y(x.shape());
    if (cache) {
        cache->mean.assign(static_cast<size_t>(n * sp), 0.0);
        cache->inv_std.assign(static_cast<size_t>(n * sp), 0.0);
        cache->xhat = Tensor(x.shape());
    }
    for (int64_t s = 0; s < n; ++s)
        for (int64_t t = 0; t < sp; ++t) {
            double mean = 0.0, var = 0.0;
            for (int64_t ci = 0; ci < c; ++ci) mean += x[(s * c + ci) * sp + t];
            mean /= static_cast<double>(c);
            for (int64_t ci = 0; ci < c; ++ci) {
                const double d = x[(s * c + ci) * sp + t] - mean;
                var += d * d;
            }
            var /= static_cast<double>(c);
            const double inv = 1.0 / std::sqrt(var + eps);
            if (cache) {
                cache->mean[s * sp + t] = mean;
                cache->inv_std[s * sp + t] = inv;
            }
            for (int64_t ci = 0; ci < c; ++ci) {
                const size_t idx = static_cast<size_t>((s * c + ci) * sp + t);
                const double xh = (x[idx] - mean) * inv;
                if (cache) cache->xhat[idx] = static_cast<float>(xh);
                y[idx] = static_cast<float>(xh * weight[ci] + bias[ci]);
            }
        }
    return y;
}

Tensor layernorm_backward(const Tensor& dy, const Tensor& weight, const NormCache& cache, Tensor* dw, Tensor* db) {
    const int64_t n = dy.dim(0), c = dy.dim(1), sp = spatial_size(dy);
    Tensor dx(dy.shape());
    std::vector<double> g(static_cast<size_t>(c));
    for (int64_t s = 0; s < n; ++s)
        for (int64_t t = 0; t < sp; ++t) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (int64_t ci = 0; ci < c; ++ci) {
                const size_t idx = static_cast<size_t>((s * c + ci) * sp + t);
                g[ci] = static_cast<double>(dy[idx]) * weight[ci];
                sum_g += g[ci];
                sum_gx += g[ci] * cache.xhat[idx];
                if (dw) (*dw)[ci] += dy[idx] * cache.xhat[idx];
                if (db) (*db)[ci] += dy[idx];
            }
            const double inv = cache.inv_std[s * sp + t];
            for (int64_t ci = 0; ci < c; ++ci) {
                const size_t idx = static_cast<size_t>((s * c + ci) * sp + t);
                dx[idx] = static_cast<float>(inv / c * (c * g[ci] - sum_g - cache.xhat[idx] * sum_gx));
            }
        }
    return dx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data()) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.size(); ++i)
        if (!(y[i] > 0.0f)) dx[i] = 0.0f;
    return dx;
}

namespace {

struct PoolGeom {
    int64_t n, c, h, w, k, stride, ho, wo;
    bool global;
};

PoolGeom pool_geom(const Shape& s, int64_t kernel, int64_t stride) {
    PoolGeom g{s[0], s[1], s[2], s[3], kernel, stride, 1, 1, kernel == 0};
    if (!g.global) {
        g.ho = (g.h - kernel) / stride + 1;
        g.wo = (g.w - kernel) / stride + 1;
    } else {
        g.k = 0;
    }
    return g;
}

Shape pool_out_shape(const PoolGeom& g) {
    if (g.global) return {g.n, g.c};
    return {g.n, g.c, g.ho, g.wo};
}

}  // namespace

Tensor avgpool_forward(const Tensor& x, int64_t kernel, int64_t stride) {
    const auto g = pool_geom(x.shape(), kernel, stride);
    Tensor y(pool_out_shape(g));
    for (int64_t s = 0; s < g.n; ++s)
        for (int64_t ci = 0; ci < g.c; ++ci) {
            const float* xc = x.raw() + ((s * g.c + ci) * g.h) * g.w;
            if (g.global) {
                double acc = 0.0;
                for (int64_t t = 0; t < g.h * g.w; ++t) acc += xc[t];
                y[s * g.c + ci] = static_cast<float>(acc / static_cast<double>(g.h * g.w));
                continue;
            }
            float* yc = y.raw() + ((s * g.c + ci) * g.ho) * g.wo;
            for (int64_t i = 0; i < g.ho; ++i)
                for (int64_t j = 0; j < g.wo; ++j) {
                    double acc = 0.0;
                    for (int64_t p = 0; p < g.k; ++p)
                        for (int64_t q = 0; q < g.k; ++q) acc += xc[(i * g.stride + p) * g.w + j * g.stride + q];
                    yc[i * g.wo + j] = static_cast<float>(acc / static_cast<double>(g.k * g.k));
                }
        }
    return y;
}

Tensor avgpool_backward(const Shape& x_shape, const Tensor& dy, int64_t kernel, int64_t stride) {
    const auto g = pool_geom(x_shape, kernel, stride);
    Tensor dx(x_shape);
    for (int64_t s = 0; s < g.n; ++s)
        for (int64_t ci = 0; ci < g.c; ++ci) {
            float* dxc = dx.raw() + ((s * g.c + ci) * g.h) * g.w;
            if (g.global) {
                const float v = dy[s * g.c + ci] / static_cast<float>(g.h * g.w);
                for (int64_t t = 0; t < g.h * g.w; ++t) dxc[t] += v;
                continue;
            }
            const float* gc = dy.raw() + ((s * g.c + ci) * g.ho) * g.wo;
            const float norm = 1.0f / static_cast<float>(g.k * g.k);
            for (int64_t i = 0; i < g.ho; ++i)
                for (int64_t j = 0; j < g.wo; ++j)
                    for (int64_t p = 0; p < g.k; ++p)
                        for (int64_t q = 0; q < g.k; ++q)
                            dxc[(i * g.stride + p) * g.w + j * g.stride + q] += gc[i * g.wo + j] * norm;
        }
    return dx;
}

Tensor maxpool_forward(const Tensor& x, int64_t kernel, int64_t stride) {
    const auto g = pool_geom(x.shape(), kernel, stride);
    Tensor y(pool_out_shape(g));
    const int64_t kh = g.global ? g.h : g.k, kw = g.global ? g.w : g.k;
    for (int64_t s = 0; s < g.n; ++s)
        for (int64_t ci = 0; ci < g.c; ++ci) {
            const float* xc = x.raw() + ((s * g.c + ci) * g.h) * g.w;
            float* yc = y.raw() + (s * g.c + ci) * g.ho * g.wo;
            for (int64_t i = 0; i < g.ho; ++i)
                for (int64_t j = 0; j < g.wo; ++j) {
                    float best = -std::numeric_limits<float>::infinity();
                    for (int64_t p = 0; p < kh; ++p)
                        for (int64_t q = 0; q < kw; ++q)
                            best = std::max(best, xc[(i * g.stride + p) * g.w + j * g.stride + q]);
                    yc[i * g.wo + j] = best;
                }
        }
    return y;
}

Tensor maxpool_backward(const Tensor& x, const Tensor& dy, int64_t kernel, int64_t stride) {
    const auto g = pool_geom(x.shape(), kernel, stride);
    Tensor dx(x.shape());
    const int64_t kh = g.global ? g.h : g.k, kw = g.global ? g.w : g.k;
    for (int64_t s = 0; s < g.n; ++s)
        for (int64_t ci = 0; ci < g.c; ++ci) {
            const float* xc = x.raw() + ((s * g.c + ci) * g.h) * g.w;
            float* dxc = dx.raw() + ((s * g.c + ci) * g.h) * g.w;
            const float* gc = dy.raw() + (s * g.c + ci) * g.ho * g.wo;
            for (int64_t i = 0; i < g.ho; ++i)
                for (int64_t j = 0; j < g.wo; ++j) {
                    int64_t arg = -1;
                    float best = -std::numeric_limits<float>::infinity();
                    for (int64_t p = 0; p < kh; ++p)
                        for (int64_t q = 0; q < kw; ++q) {
                            const int64_t idx = (i * g.stride + p) * g.w + j * g.stride + q;
                            if (arg < 0 || xc[idx] > best) {
                                best = xc[idx];
                                arg = idx;
                            }
                        }
                    dxc[arg] += gc[i * g.wo + j];
                }
        }
    return dx;
}

}  // namespace zipit::kernels
