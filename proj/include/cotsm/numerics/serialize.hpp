#pragma once

#include "json.hpp"

#include "cotsm/numerics/tensor.hpp"

namespace cotsm {

// {"shape": [...], "data": [...]}; doubles are written with round-trip precision.
nlohmann::json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const nlohmann::json& doc);

}  // namespace cotsm
