#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "zipit/tensor.hpp"

namespace zipit {

// One synthetic classification task: a subset of the global classes, each a
// unit-covariance Gaussian around a class mean on the radius-3 sphere.
struct TaskSpec {
    std::vector<int32_t> class_subset;  // sorted global class ids
    int64_t input_dim = 8;              // flat inputs when image is empty
    std::vector<int64_t> image;         // {C, H, W} for image-shaped inputs
    int64_t samples_per_class = 100;
    uint64_t seed = 0;   // class means depend only on (seed, class id)
    uint64_t draw = 0;   // independent noise stream (e.g. 0 train, 1 test)

    int64_t n_classes() const { return static_cast<int64_t>(class_subset.size()); }
    Shape sample_shape() const;
    void validate() const;
};

inline constexpr double kClassMeanRadius = 3.0;

struct Dataset {
    Tensor x;                      // [N, d] or [N, C, H, W]
    std::vector<int32_t> y;        // local labels: index into classes
    std::vector<int32_t> classes;  // global class id of each local label

    int64_t size() const { return x.rank() ? x.dim(0) : 0; }
    int64_t n_classes() const { return static_cast<int64_t>(classes.size()); }
    Shape sample_shape() const { return Shape(x.shape().begin() + 1, x.shape().end()); }
};

// Mean of a global class; shared by every task built from the same seed.
Tensor class_mean(uint64_t seed, int32_t class_id, const Shape& sample_shape);

Dataset make_dataset(const TaskSpec& spec);

// Rows selected by index (in the given order).
Dataset subset(const Dataset& d, std::span<const int64_t> rows);
// First n rows of a deterministic shuffle of d.
Dataset sample_rows(const Dataset& d, int64_t n, uint64_t seed);
// Row-wise concatenation; labels are re-based into the union of class lists,
// which must be disjoint.
Dataset concat(std::span<const Dataset> parts);

void save_dataset(const Dataset& d, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

}  // namespace zipit
