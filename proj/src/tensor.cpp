#include "zipit/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "zipit/error.hpp"

namespace zipit {

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

int64_t shape_numel(const Shape& shape) {
    int64_t n = 1;
    for (auto d : shape) n *= d;
    return n;
}

static void check_dims(const Shape& shape) {
    for (auto d : shape)
        if (d <= 0) throw ShapeError("tensor dimensions must be positive, got " + shape_str(shape));
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)) {
    check_dims(shape_);
    data_.assign(static_cast<size_t>(shape_numel(shape_)), fill);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_dims(shape_);
    if (static_cast<int64_t>(data_.size()) != shape_numel(shape_))
        throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                         shape_str(shape_));
}

Tensor Tensor::matrix(int64_t rows, int64_t cols, std::initializer_list<float> values) {
    return Tensor({rows, cols}, std::vector<float>(values));
}

Tensor Tensor::vector(std::initializer_list<float> values) {
    return Tensor({static_cast<int64_t>(values.size())}, std::vector<float>(values));
}

Tensor Tensor::identity(int64_t n) {
    Tensor t({n, n});
    for (int64_t i = 0; i < n; ++i) t.at(i, i) = 1.0f;
    return t;
}

Tensor Tensor::reshaped(Shape shape) const {
    return Tensor(std::move(shape), data_);
}

static void require_matrix(const Tensor& a, const char* what) {
    if (a.rank() != 2) throw ShapeError(std::string(what) + ": expected a matrix, got " + shape_str(a.shape()));
}

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_matrix(a, "matmul");
    require_matrix(b, "matmul");
    const int64_t n = a.dim(0), k = a.dim(1), m = b.dim(1);
    if (b.dim(0) != k)
        throw ShapeError("matmul: inner dimensions disagree " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    Tensor out({n, m});
    std::vector<double> row(static_cast<size_t>(m));
    for (int64_t i = 0; i < n; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int64_t p = 0; p < k; ++p) {
            const double av = a.at(i, p);
            if (av == 0.0) continue;
            const float* brow = b.raw() + p * m;
            for (int64_t j = 0; j < m; ++j) row[j] += av * brow[j];
        }
        for (int64_t j = 0; j < m; ++j) out.at(i, j) = static_cast<float>(row[j]);
    }
    return out;
}

Tensor transpose(const Tensor& a) {
    require_matrix(a, "transpose");
    Tensor out({a.dim(1), a.dim(0)});
    for (int64_t i = 0; i < a.dim(0); ++i)
        for (int64_t j = 0; j < a.dim(1); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

Tensor col_block(const Tensor& a, int64_t begin, int64_t end) {
    require_matrix(a, "col_block");
    if (begin < 0 || end > a.dim(1) || begin >= end) throw ShapeError("col_block: bad column range");
    Tensor out({a.dim(0), end - begin});
    for (int64_t i = 0; i < a.dim(0); ++i)
        for (int64_t j = begin; j < end; ++j) out.at(i, j - begin) = a.at(i, j);
    return out;
}

Tensor row_block(const Tensor& a, int64_t begin, int64_t end) {
    require_matrix(a, "row_block");
    if (begin < 0 || end > a.dim(0) || begin >= end) throw ShapeError("row_block: bad row range");
    Tensor out({end - begin, a.dim(1)});
    std::copy(a.raw() + begin * a.dim(1), a.raw() + end * a.dim(1), out.raw());
    return out;
}

Tensor matvec(const Tensor& a, const Tensor& x) {
    require_matrix(a, "matvec");
    if (x.rank() != 1 || x.dim(0) != a.dim(1))
        throw ShapeError("matvec: " + shape_str(a.shape()) + " x " + shape_str(x.shape()));
    Tensor out({a.dim(0)});
    for (int64_t i = 0; i < a.dim(0); ++i) {
        double acc = 0.0;
        for (int64_t j = 0; j < a.dim(1); ++j) acc += static_cast<double>(a.at(i, j)) * x[j];
        out[i] = static_cast<float>(acc);
    }
    return out;
}

Tensor square_entries(const Tensor& a) {
    Tensor out = a;
    for (auto& v : out.data()) v = v * v;
    return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor out = a;
    for (size_t i = 0; i < out.size(); ++i) out[i] += b[i];
    return out;
}

Tensor scale(const Tensor& a, float s) {
    Tensor out = a;
    for (auto& v : out.data()) v *= s;
    return out;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("max_abs_diff: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    float m = 0.0f;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

double l2_distance(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape())
        throw ShapeError("l2_distance: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

bool all_finite(const Tensor& t) {
    return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

}  // namespace zipit
