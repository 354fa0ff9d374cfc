#pragma once

#include <map>
#include <string>

#include "json.hpp"

#include "cotsm/models/tokenizer.hpp"
#include "cotsm/numerics/rng.hpp"
#include "cotsm/numerics/tensor.hpp"
#include "cotsm/world/dataset.hpp"

namespace cotsm::models {

// Seeded per-word semantic codes shared by the vision encoder and the language model's
// factorised input embedding. Synonyms share the code of their canonical word, and a
// word's code depends only on (seed, word), never on vocabulary order.
Tensor semantic_codes(const Tokenizer& tokenizer, const world::Grammar& grammar, std::size_t code_dim,
                      std::uint64_t seed);

struct VisionConfig {
    std::size_t code_dim = 16;
    std::size_t feature_dim = 64;
    double noise_scale = 0.05;
    friend bool operator==(const VisionConfig&, const VisionConfig&) = default;
};

// Fixed image "encoder": feature = [code(sub), code(obj), code(verb)] * projection + noise.
// Parameters never change after construction.
class VisionEncoder {
public:
    VisionEncoder() = default;
    VisionEncoder(const Tokenizer& tokenizer, const world::Grammar& grammar, const Tensor& codes,
                  const VisionConfig& config, Rng& rng);

    // Deterministic per scene: the noise is drawn from scene.noise_seed.
    [[nodiscard]] Tensor encode(const world::Scene& scene) const;

    [[nodiscard]] const VisionConfig& config() const { return config_; }
    [[nodiscard]] const Tensor& projection() const { return projection_; }
    [[nodiscard]] const Tensor& word_embedding(const std::string& word) const;
    [[nodiscard]] std::size_t feature_dim() const { return config_.feature_dim; }

    [[nodiscard]] nlohmann::json to_json() const;
    static VisionEncoder from_json(const nlohmann::json& doc);

    friend bool operator==(const VisionEncoder&, const VisionEncoder&) = default;

private:
    VisionConfig config_;
    std::map<std::string, Tensor> word_embeddings_;  // [code_dim] per subject/object/verb
    Tensor projection_;                              // [3 * code_dim x feature_dim]
};

}  // namespace cotsm::models
