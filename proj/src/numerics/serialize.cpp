#include "cotsm/numerics/serialize.hpp"

#include "cotsm/errors.hpp"

namespace cotsm {

nlohmann::json tensor_to_json(const Tensor& t) { return {{"shape", t.shape()}, {"data", t.values()}}; }

Tensor tensor_from_json(const nlohmann::json& doc) {
    try {
        return Tensor(doc.at("shape").get<Shape>(), doc.at("data").get<std::vector<double>>());
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed tensor: ") + e.what());
    }
}

}  // namespace cotsm
