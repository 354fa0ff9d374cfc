#pragma once

#include <vector>

#include "cotsm/adaptor/adaptor.hpp"
#include "cotsm/meta/engine.hpp"
#include "cotsm/models/tiny_lm.hpp"
#include "cotsm/models/tokenizer.hpp"

namespace cotsm::meta {

// Summed chain-of-thought loss over dataset samples, with the frozen LM held by reference.
class CotObjective final : public Objective {
public:
    CotObjective(const models::TinyLM& lm, const models::Tokenizer& tokenizer, adaptor::AdaptorConfig config,
                 const world::Dataset& data);

    [[nodiscard]] std::vector<ParamSlot> slots() const override { return adaptor::adaptor_slots(config_); }
    [[nodiscard]] ad::Var loss(std::span<const ad::Var> params, std::span<const SampleRef> items) const override;

    [[nodiscard]] const adaptor::AdaptorConfig& config() const { return config_; }
    [[nodiscard]] const world::Dataset& data() const { return data_; }
    [[nodiscard]] const models::TinyLM& lm() const { return lm_; }
    [[nodiscard]] const ad::Var& feature(std::size_t index) const { return features_.at(index); }
    [[nodiscard]] const adaptor::CoTTargets& targets(const SampleRef& ref) const;

private:
    const models::TinyLM& lm_;
    adaptor::AdaptorConfig config_;
    const world::Dataset& data_;
    std::vector<ad::Var> features_;
    std::vector<std::vector<adaptor::CoTTargets>> targets_;  // [sample][reference]
};

struct GeneratedCaption {
    std::size_t episode = 0;
    std::size_t sample = 0;  // index into the evaluated dataset
    adaptor::CotOutput output;
};

struct MetaTestConfig {
    std::size_t episodes = 20;
    EpisodeShape shape;
    double alpha = 0.01;  // 0 disables support adaptation
    std::size_t inner_steps = 1;
    adaptor::MaxLens max_lens;
};

// Adapts to every episode's support set and captions its query samples. `train_categories`
// are the categories meta-training saw; any overlap with the evaluated data is refused.
std::vector<GeneratedCaption> meta_test(const MetaState& state, const CotObjective& objective,
                                        const std::set<int>& train_categories, const MetaTestConfig& config, Rng& rng);

struct BaselineConfig {
    std::size_t batch = 32;  // samples per mini-batch
    double lr = 0.001;
    AdamWHyper adamw;
};

// Non-episodic training: direct adaptor weights, mean CoT loss over uniformly sampled
// mini-batches. The result is a subspace-free MetaState so meta_test can evaluate it.
MetaState baseline_train(const CotObjective& objective, std::size_t iterations, const BaselineConfig& config, Rng& rng,
                         const IterationHook& hook = {});

}  // namespace cotsm::meta
