#pragma once

// Per-kind layer kernels shared by inference and training. Activations are
// [N, C] or [N, C, H, W]; "spatial" is the product of trailing dims.

#include <vector>

#include "zipit/graph.hpp"

namespace zipit::kernels {

inline int64_t spatial_size(const Tensor& x) {
    int64_t s = 1;
    for (size_t i = 2; i < x.rank(); ++i) s *= x.dim(i);
    return s;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor& b);
// Returns dx; accumulates into dw/db when non-null.
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dw, Tensor* db);

Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, int64_t stride, int64_t pad);
Tensor conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, int64_t stride, int64_t pad, Tensor* dw,
                     Tensor* db);

struct NormCache {
    std::vector<double> mean;     // per channel (BatchNorm) or per row (LayerNorm)
    std::vector<double> inv_std;
    Tensor xhat;
};

// Per-channel mean and population variance over batch and spatial axes.
void channel_moments(const Tensor& x, std::vector<double>& mean, std::vector<double>& var);

Tensor batchnorm_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, const std::vector<double>& mean,
                         const std::vector<double>& var, double eps, NormCache* cache);
Tensor batchnorm_backward(const Tensor& dy, const Tensor& weight, const NormCache& cache, Tensor* dw, Tensor* db);

Tensor layernorm_forward(const Tensor& x, const Tensor& weight, const Tensor& bias, double eps, NormCache* cache);
Tensor layernorm_backward(const Tensor& dy, const Tensor& weight, const NormCache& cache, Tensor* dw, Tensor* db);

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

Tensor avgpool_forward(const Tensor& x, int64_t kernel, int64_t stride);
Tensor avgpool_backward(const Shape& x_shape, const Tensor& dy, int64_t kernel, int64_t stride);
Tensor maxpool_forward(const Tensor& x, int64_t kernel, int64_t stride);
Tensor maxpool_backward(const Tensor& x, const Tensor& dy, int64_t kernel, int64_t stride);

}  // namespace zipit::kernels
