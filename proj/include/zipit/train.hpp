#pragma once

#include <string>
#include <vector>

#include "zipit/data.hpp"
#include "zipit/graph.hpp"

namespace zipit {

struct Arch {
    enum class Kind { Mlp, Conv };
    Kind kind = Kind::Mlp;
    // Mlp: hidden widths. Conv: channels per stage (3x3 conv, BN, ReLU,
    // optional residual block), followed by a full-extent projection conv,
    // global average pool and the head.
    std::vector<int64_t> widths{64, 64};
    bool skip = false;

    // "mlp:64,64", "conv:8,16", "conv:8:skip"
    static Arch parse(const std::string& text);
    std::string str() const;
};

struct TrainConfig {
    double lr = 0.05;
    int epochs = 60;
    int64_t batch_size = 50;
    double weight_decay = 2e-3;
    double momentum = 0.9;
    uint64_t seed = 0;
    Arch arch;

    void validate() const;
};

struct TrainLogRow {
    int epoch;
    double loss;
    double acc;
};

// Graph for the architecture with zero-filled parameters.
ModelGraph build_model(const Arch& arch, const Shape& sample_shape, int64_t n_classes);

// Uniform fan-in initialization U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for
// weighted layers; identity statistics for normalization layers.
void init_params(ModelGraph& g, uint64_t seed);

// Mini-batch SGD on softmax cross-entropy over the dataset's local labels.
// Throws NumericError naming the epoch when the loss becomes non-finite.
ModelGraph train(const Dataset& data, const TrainConfig& cfg, std::vector<TrainLogRow>* log = nullptr);
ModelGraph train(const TaskSpec& spec, const TrainConfig& cfg, std::vector<TrainLogRow>* log = nullptr);

// gamma * A + (1 - gamma) * B, parameter-wise.
ModelGraph interpolate_weights(const ModelGraph& a, const ModelGraph& b, double gamma);

// Fraction of rows whose argmax on `head` matches the labels.
double accuracy(const ModelGraph& model, const Dataset& data, const std::string& head);

}  // namespace zipit
