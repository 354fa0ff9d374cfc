#pragma once

#include <cstdint>
#include <string>

#include "json.hpp"

#include "cotsm/adaptor/adaptor.hpp"
#include "cotsm/meta/cot_task.hpp"
#include "cotsm/meta/engine.hpp"
#include "cotsm/models/pretrain.hpp"
#include "cotsm/models/vision_encoder.hpp"
#include "cotsm/world/dataset.hpp"
#include "cotsm/world/grammar.hpp"

namespace cotsm::harness {

struct WorldSection {
    world::GrammarConfig grammar;
    world::DatasetSpec data;
    int test_categories = 5;
    std::uint64_t cross_domain_seed = 1000;  // added to the root seed for the shifted world
};

struct LmSection {
    models::LmConfig model;  // vocab comes from the tokenizer
    models::CorpusConfig corpus;
    models::PretrainConfig pretrain;
};

struct MetaSection {
    meta::MetaConfig engine;
    std::string init = "xavier";
    meta::EpisodeShape episode;
    std::size_t iterations = 300;
    std::size_t checkpoint_every = 100;  // 0: final checkpoint only
};

struct BaselineSection {
    meta::BaselineConfig train;
    std::size_t iterations = 300;
};

struct ExperimentConfig {
    std::uint64_t seed = 1;
    WorldSection world;
    models::VisionConfig vision;
    LmSection lm;
    adaptor::AdaptorConfig adaptor;  // feature/model widths follow vision and lm
    MetaSection meta;
    meta::MetaTestConfig eval;
    BaselineSection baseline;

    // Cross-field checks; throws ConfigError naming the field.
    void validate() const;
};

// Missing fields keep their defaults; unknown fields and wrong types are ConfigErrors
// that name the offending path (e.g. "meta.alpha").
ExperimentConfig config_from_json(const nlohmann::json& doc);
ExperimentConfig load_config(const std::string& path);
nlohmann::json to_json(const ExperimentConfig& config);

// SHA-256 of the canonical JSON form, hex encoded.
std::string config_hash(const ExperimentConfig& config);

}  // namespace cotsm::harness
