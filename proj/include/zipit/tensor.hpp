#pragma once

#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace zipit {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& shape);
int64_t shape_numel(const Shape& shape);

// Dense row-major float32 array.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor matrix(int64_t rows, int64_t cols, std::initializer_list<float> values);
    static Tensor vector(std::initializer_list<float> values);
    static Tensor identity(int64_t n);

    const Shape& shape() const { return shape_; }
    int64_t dim(size_t axis) const { return shape_.at(axis); }
    size_t rank() const { return shape_.size(); }
    size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float* raw() { return data_.data(); }
    const float* raw() const { return data_.data(); }

    float& operator[](size_t i) { return data_[i]; }
    float operator[](size_t i) const { return data_[i]; }

    // 2-D element access.
    float& at(int64_t r, int64_t c) { return data_[static_cast<size_t>(r * shape_[1] + c)]; }
    float at(int64_t r, int64_t c) const { return data_[static_cast<size_t>(r * shape_[1] + c)]; }

    Tensor reshaped(Shape shape) const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    std::vector<float> data_;
};

// Matrix helpers; all accumulate in double and round once to float.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Columns [begin, end) of a 2-D tensor.
Tensor col_block(const Tensor& a, int64_t begin, int64_t end);
// Rows [begin, end) of a 2-D tensor.
Tensor row_block(const Tensor& a, int64_t begin, int64_t end);
// y = A x for a 2-D A and 1-D x.
Tensor matvec(const Tensor& a, const Tensor& x);
Tensor square_entries(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float s);

float max_abs_diff(const Tensor& a, const Tensor& b);
double l2_distance(const Tensor& a, const Tensor& b);
bool all_finite(const Tensor& t);

}  // namespace zipit
