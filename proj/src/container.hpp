#pragma once

#include <json.hpp>
#include <string>
#include <string_view>
#include <vector>

#include "zipit/checkpoint.hpp"
#include "zipit/tensor.hpp"

namespace zipit::container {

struct TensorSpec {
    std::string name;
    Shape shape;
};

std::string encode(const char (&magic)[8], const nlohmann::json& header, const std::vector<const Tensor*>& tensors);

struct Decoded {
    nlohmann::json header;
    std::string_view payload;
};

// Checks magic, version and header framing; the payload is returned unparsed.
Decoded decode_frame(std::string_view bytes, const char (&magic)[8]);

// Slices tensors of the given shapes off the payload, which must be consumed exactly.
std::vector<Tensor> read_tensors(std::string_view payload, const std::vector<TensorSpec>& specs);

Shape shape_from_json(const nlohmann::json& j);

}  // namespace zipit::container
