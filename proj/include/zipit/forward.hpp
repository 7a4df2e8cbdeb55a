#pragma once

#include <map>
#include <optional>
#include <string>

#include "zipit/graph.hpp"

namespace zipit {

using Activations = std::map<std::string, Tensor>;

enum class NormStats {
    Running,  // BatchNorm uses running_mean / running_var (inference)
    Batch,    // BatchNorm normalizes with statistics of the batch itself
};

struct ForwardOptions {
    // Evaluate only the ancestors of this head; all heads when unset.
    std::optional<std::string> head;
    NormStats norm_stats = NormStats::Running;
};

// Evaluates the graph on a batch shaped [N, dim] or [N, C, H, W] and returns
// the activation of every evaluated node. Pure: no state is kept between
// calls. Shape problems raise ShapeError, non-finite activations raise
// NumericError; both name the offending node.
Activations forward(const ModelGraph& model, const Tensor& batch, const ForwardOptions& opts = {});

inline Activations forward(const ModelGraph& model, const Tensor& batch, const std::string& head) {
    return forward(model, batch, ForwardOptions{head, NormStats::Running});
}

// Row-wise argmax of an [N, C] logit matrix.
std::vector<int64_t> argmax_rows(const Tensor& logits);

}  // namespace zipit
