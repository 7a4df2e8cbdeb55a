#include "zipit/data.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "container.hpp"
#include "zipit/error.hpp"
#include "zipit/rng.hpp"

namespace zipit {

using nlohmann::json;

namespace {
constexpr uint64_t kMeanStream = 0x6d65616eull;    // "mean"
constexpr uint64_t kNoiseStream = 0x6e6f6973ull;   // "nois"
}  // namespace

Shape TaskSpec::sample_shape() const {
    if (!image.empty()) return Shape(image.begin(), image.end());
    return {input_dim};
}

void TaskSpec::validate() const {
    if (class_subset.empty()) throw ConfigError("task has an empty class subset");
    if (!std::is_sorted(class_subset.begin(), class_subset.end()) ||
        std::adjacent_find(class_subset.begin(), class_subset.end()) != class_subset.end())
        throw ConfigError("class subset must be sorted and free of duplicates");
    if (class_subset.front() < 0) throw ConfigError("class ids must be non-negative");
    if (samples_per_class < 2) throw ConfigError("samples_per_class must be at least 2");
    if (!image.empty() && image.size() != 3) throw ConfigError("image dims must be {C,H,W}");
    for (auto d : sample_shape())
        if (d <= 0) throw ConfigError("input dimensions must be positive");
}

Tensor class_mean(uint64_t seed, int32_t class_id, const Shape& sample_shape) {
    Rng rng(Rng::mix({seed, static_cast<uint64_t>(class_id), kMeanStream}));
    Tensor mu(sample_shape);
    double norm = 0.0;
    std::vector<double> v(mu.size());
    for (auto& e : v) {
        e = rng.normal();
        norm += e * e;
    }
    norm = std::sqrt(norm);
    for (size_t i = 0; i < v.size(); ++i) mu[i] = static_cast<float>(kClassMeanRadius * v[i] / norm);
    return mu;
}

Dataset make_dataset(const TaskSpec& spec) {
    spec.validate();
    const Shape sample = spec.sample_shape();
    const int64_t dim = shape_numel(sample);
    const int64_t n = spec.n_classes() * spec.samples_per_class;
    Shape full{n};
    full.insert(full.end(), sample.begin(), sample.end());
    Dataset d;
    d.x = Tensor(full);
    d.classes = spec.class_subset;
    d.y.reserve(static_cast<size_t>(n));
    int64_t row = 0;
    for (int32_t local = 0; local < spec.n_classes(); ++local) {
        const int32_t cls = spec.class_subset[local];
        const Tensor mu = class_mean(spec.seed, cls, sample);
        Rng rng(Rng::mix({spec.seed, static_cast<uint64_t>(cls), spec.draw, kNoiseStream}));
        for (int64_t s = 0; s < spec.samples_per_class; ++s, ++row) {
            float* dst = d.x.raw() + row * dim;
            for (int64_t j = 0; j < dim; ++j) dst[j] = static_cast<float>(mu[j] + rng.normal());
            d.y.push_back(local);
        }
    }
    return d;
}

Dataset subset(const Dataset& d, std::span<const int64_t> rows) {
    if (rows.empty()) throw ConfigError("cannot take an empty subset");
    const Shape sample = d.sample_shape();
    const int64_t dim = shape_numel(sample);
    Shape full{static_cast<int64_t>(rows.size())};
    full.insert(full.end(), sample.begin(), sample.end());
    Dataset out;
    out.x = Tensor(full);
    out.classes = d.classes;
    for (size_t i = 0; i < rows.size(); ++i) {
        const int64_t r = rows[i];
        if (r < 0 || r >= d.size()) throw ConfigError("subset row out of range");
        std::copy(d.x.raw() + r * dim, d.x.raw() + (r + 1) * dim, out.x.raw() + static_cast<int64_t>(i) * dim);
        out.y.push_back(d.y[static_cast<size_t>(r)]);
    }
    return out;
}

Dataset sample_rows(const Dataset& d, int64_t n, uint64_t seed) {
    std::vector<int64_t> idx(static_cast<size_t>(d.size()));
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(static_cast<size_t>(std::min<int64_t>(n, d.size())));
    return subset(d, idx);
}

Dataset concat(std::span<const Dataset> parts) {
    if (parts.empty()) throw ConfigError("nothing to concatenate");
    const Shape sample = parts[0].sample_shape();
    int64_t n = 0;
    std::set<int32_t> seen;
    Dataset out;
    for (const auto& p : parts) {
        if (p.sample_shape() != sample) throw ShapeError("concat: sample shapes differ");
        n += p.size();
        for (auto c : p.classes) {
            if (!seen.insert(c).second) throw ConfigError("concat: class " + std::to_string(c) + " appears twice");
            out.classes.push_back(c);
        }
    }
    Shape full{n};
    full.insert(full.end(), sample.begin(), sample.end());
    out.x = Tensor(full);
    int64_t row = 0, offset = 0;
    const int64_t dim = shape_numel(sample);
    for (const auto& p : parts) {
        std::copy(p.x.raw(), p.x.raw() + p.size() * dim, out.x.raw() + row * dim);
        for (auto label : p.y) out.y.push_back(static_cast<int32_t>(label + offset));
        row += p.size();
        offset += p.n_classes();
    }
    return out;
}

void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    Tensor y({d.size()});
    for (int64_t i = 0; i < d.size(); ++i) y[i] = static_cast<float>(d.y[static_cast<size_t>(i)]);
    json header = {{"format", "zipit.dataset"},
                   {"tensors", json::array({{{"name", "x"}, {"shape", d.x.shape()}}, {{"name", "y"}, {"shape", y.shape()}}})},
                   {"classes", d.classes}};
    write_file_bytes(path, container::encode(kDatasetMagic, header, {&d.x, &y}));
}

Dataset load_dataset(const std::filesystem::path& path) {
    const std::string bytes = read_file_bytes(path);
    auto frame = container::decode_frame(bytes, kDatasetMagic);
    std::vector<container::TensorSpec> specs;
    Dataset d;
    try {
        for (const auto& t : frame.header.at("tensors"))
            specs.push_back({t.at("name").get<std::string>(), container::shape_from_json(t.at("shape"))});
        d.classes = frame.header.at("classes").get<std::vector<int32_t>>();
    } catch (const json::exception& e) {
        throw FormatError(FormatErrc::bad_header, std::string("malformed header: ") + e.what());
    }
    if (specs.size() != 2 || specs[0].name != "x" || specs[1].name != "y")
        throw FormatError(FormatErrc::bad_header, "malformed header: expected tensors x and y");
    if (specs[1].shape.size() != 1 || specs[1].shape[0] != specs[0].shape[0])
        throw FormatError(FormatErrc::length_mismatch, "shape/length disagreement: label count differs from rows");
    auto tensors = container::read_tensors(frame.payload, specs);
    d.x = std::move(tensors[0]);
    for (float v : tensors[1].data()) {
        const auto label = static_cast<int32_t>(v);
        if (static_cast<float>(label) != v || label < 0 || label >= d.n_classes())
            throw FormatError(FormatErrc::length_mismatch, "shape/length disagreement: label out of range");
        d.y.push_back(label);
    }
    return d;
}

}  // namespace zipit
