#include "cotsm/meta/cot_task.hpp"

#include <chrono>
#include <cmath>

#include "cotsm/errors.hpp"

namespace cotsm::meta {

using ad::Var;

CotObjective::CotObjective(const models::TinyLM& lm, const models::Tokenizer& tokenizer, adaptor::AdaptorConfig config,
                           const world::Dataset& data)
    : lm_(lm), config_(config), data_(data) {
    config_.validate();
    if (!lm.frozen()) throw ContractError("cot objective: the language model must be frozen");
    if (config_.model_dim != lm.config().d_model) throw DimensionError("cot objective: adaptor width differs from the LM");
    for (const auto& s : data) {
        if (s.image_feature.size() != config_.feature_dim)
            throw DimensionError("cot objective: feature of sample " + std::to_string(s.id) + " has " +
                                 std::to_string(s.image_feature.size()) + " entries");
        features_.push_back(adaptor::feature_var(s.image_feature));
        auto& per_ref = targets_.emplace_back();
        for (std::size_t r = 0; r < s.references.size(); ++r)
            per_ref.push_back(adaptor::CoTTargets::from_sample(s, r, tokenizer));
    }
}

const adaptor::CoTTargets& CotObjective::targets(const SampleRef& ref) const {
    if (ref.index >= targets_.size()) throw IndexError("cot objective: sample index out of range");
    if (ref.reference >= targets_[ref.index].size()) throw IndexError("cot objective: reference index out of range");
    return targets_[ref.index][ref.reference];
}

Var CotObjective::loss(std::span<const Var> params, std::span<const SampleRef> items) const {
    if (items.empty()) throw ContractError("cot objective: no items");
    const auto steps = adaptor::assemble_steps(config_, params);
    Var total;
    for (const auto& item : items) {
        const Var l = adaptor::cot_loss(steps, lm_, feature(item.index), targets(item), config_);
        total = total.defined() ? ad::add(total, l) : l;
    }
    return total;
}

std::vector<GeneratedCaption> meta_test(const MetaState& state, const CotObjective& objective,
                                        const std::set<int>& train_categories, const MetaTestConfig& config, Rng& rng) {
    for (int c : world::categories_in(objective.data()))
        if (train_categories.contains(c))
            throw DataError("meta_test: category " + std::to_string(c) + " was seen during meta-training");
    if (config.alpha < 0.0) throw ConfigError("meta_test.alpha: must be non-negative");

    std::vector<GeneratedCaption> out;
    for (std::size_t e = 0; e < config.episodes; ++e) {
        const auto episode = sample_episode(objective.data(), config.shape, rng);
        MetaState adapted = state;
        if (config.alpha > 0.0) {
            auto coefs = inner_adapt(state, objective, episode.support, config.alpha, config.inner_steps);
            for (std::size_t j = 0; j < coefs.size(); ++j) adapted.slots[j].coef = std::move(coefs[j]);
        }
        const auto weights = reconstruct_params(adapted);
        std::vector<Var> vars;
        for (const auto& w : weights) vars.push_back(Var::constant(w));
        const auto steps = adaptor::assemble_steps(objective.config(), vars);
        for (const auto& q : episode.query) {
            out.push_back({e, q.index,
                           adaptor::cot_generate(steps, objective.lm(), objective.feature(q.index), objective.config(),
                                                 config.max_lens)});
        }
    }
    return out;
}

MetaState baseline_train(const CotObjective& objective, std::size_t iterations, const BaselineConfig& config, Rng& rng,
                         const IterationHook& hook) {
    if (config.batch == 0) throw ConfigError("baseline.batch: must be positive");
    if (!(config.lr > 0.0)) throw ConfigError("baseline.lr: must be positive");
    const auto& data = objective.data();
    if (data.empty()) throw DataError("baseline: empty dataset");

    MetaConfig mc;
    mc.subspace = false;
    mc.beta = config.lr;
    mc.adamw = config.adamw;
    Rng init = rng.stream("init");
    MetaState state = init_meta_state(objective.slots(), mc, init);

    using clock = std::chrono::steady_clock;
    for (std::size_t it = 0; it < iterations; ++it) {
        const auto start = clock::now();
        std::vector<SampleRef> batch;
        for (std::size_t b = 0; b < config.batch; ++b) {
            const auto i = rng.below(data.size());
            batch.push_back({i, rng.below(data[i].references.size())});
        }
        std::vector<Var> params;
        for (const auto& s : state.slots) params.push_back(Var::parameter(s.coef));
        const Var loss = ad::scale(objective.loss(params, batch), 1.0 / double(batch.size()));
        if (!std::isfinite(loss.value().item())) throw NumericError("baseline: non-finite loss");
        const auto grads = ad::grad(loss, params);
        for (std::size_t j = 0; j < state.slots.size(); ++j) {
            auto& s = state.slots[j];
            auto [p, o] = adamw_step(s.coef, grads[j].value(), std::move(s.coef_opt), config.lr);
            s.coef = std::move(p);
            s.coef_opt = std::move(o);
        }
        state.iteration += 1;
        if (hook) {
            const double ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
            hook({state.iteration, loss.value().item(), loss.value().item(), ms}, state);
        }
    }
    return state;
}

}  // namespace cotsm::meta
