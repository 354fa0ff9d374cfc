#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "cotsm/numerics/autodiff.hpp"
#include "cotsm/numerics/optim.hpp"
#include "cotsm/numerics/param_slot.hpp"
#include "cotsm/world/dataset.hpp"

// Subspace meta-learning: every parameter slot w_j is reconstructed as S_j c_j. The inner
// loop adapts coefficients on a support set; the outer loop updates bases and coefficients
// from query losses at the adapted coefficients.
namespace cotsm::meta {

// One training item: a dataset sample and which of its references is the target.
struct SampleRef {
    std::size_t index = 0;
    std::size_t reference = 0;
    friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct Episode {
    std::vector<int> categories;
    std::vector<SampleRef> support;
    std::vector<SampleRef> query;
};

struct EpisodeShape {
    std::size_t n_way = 2;
    std::size_t k_shot = 1;
    std::size_t l_query = 1;
};

// N categories without replacement, then K+L samples per category without replacement;
// the first K of each category go to the support set.
Episode sample_episode(const world::Dataset& data, const EpisodeShape& shape, Rng& rng);

// A differentiable loss over parameter slots.
class Objective {
public:
    virtual ~Objective() = default;
    [[nodiscard]] virtual std::vector<ParamSlot> slots() const = 0;
    // Loss summed over `items`; params are ordered as slots().
    [[nodiscard]] virtual ad::Var loss(std::span<const ad::Var> params, std::span<const SampleRef> items) const = 0;
};

enum class OuterOptimizer { adamw, sgd };
enum class BasisInit { orthonormal, identity };

struct MetaConfig {
    double alpha = 0.01;  // inner learning rate
    double beta = 0.001;  // outer learning rate
    std::size_t inner_steps = 1;
    std::size_t batch = 32;  // episodes per outer step
    bool subspace = true;    // off: slots are meta-learned directly
    std::size_t subspace_dim = 0;  // 0: max(4, d_j / 4); always capped at d_j
    bool full_subspace = false;    // D = d_j
    BasisInit basis_init = BasisInit::orthonormal;
    bool update_bases = true;
    bool second_order = false;
    OuterOptimizer outer = OuterOptimizer::adamw;
    bool sum_episodes = false;  // sum instead of mean of per-episode meta-gradients
    AdamWHyper adamw;
    std::size_t workers = 1;  // episode-parallel threads

    void validate() const;
    // D for a slot with `rows` rows.
    [[nodiscard]] std::size_t dim_for(std::size_t rows) const;
};

struct SlotState {
    ParamSlot slot;
    std::optional<Tensor> basis;  // [rows x D]; absent when subspaces are off
    Tensor coef;                  // [D x cols], or the slot itself when subspaces are off
    AdamWState basis_opt;
    AdamWState coef_opt;
};

struct MetaState {
    std::vector<SlotState> slots;
    std::uint64_t iteration = 0;
    MetaConfig config;
};

MetaState init_meta_state(const std::vector<ParamSlot>& slots, const MetaConfig& config, Rng& rng);

// w_j = S_j c_j for every slot.
std::vector<Tensor> reconstruct_params(const MetaState& state);
// Differentiable form; an undefined basis means the coefficient is the slot itself.
std::vector<ad::Var> reconstruct(std::span<const ad::Var> bases, std::span<const ad::Var> coefs);
ad::Var reconstruct_slot(const ad::Var& basis, const ad::Var& coef);

// c' after `steps` plain gradient steps on the summed support loss. Pure: the state is not touched.
std::vector<Tensor> inner_adapt(const MetaState& state, const Objective& objective, std::span<const SampleRef> support,
                                double alpha, std::size_t steps);

struct EpisodeResult {
    std::vector<Tensor> basis_grads;  // empty tensors where bases are absent or frozen
    std::vector<Tensor> coef_grads;
    double support_loss = 0.0;  // summed support loss before adaptation
    double query_loss = 0.0;    // mean query loss after adaptation
};

// Meta-gradient of one episode's query loss at the adapted coefficients.
EpisodeResult episode_meta_gradient(const MetaState& state, const Objective& objective, const Episode& episode);

struct StepStats {
    double mean_support_loss = 0.0;
    double mean_query_loss = 0.0;
};

// One outer update from a batch of episodes. Per-episode gradients may be computed in
// parallel; they are reduced in episode order.
MetaState outer_step(const MetaState& state, const Objective& objective, std::span<const Episode> episodes,
                     StepStats* stats = nullptr);

struct IterationLog {
    std::uint64_t iteration = 0;
    double mean_support_loss = 0.0;
    double mean_query_loss = 0.0;
    double wallclock_ms = 0.0;
};

using IterationHook = std::function<void(const IterationLog&, const MetaState&)>;

// `iterations` outer steps on fresh episode batches drawn from `data`.
MetaState meta_train(MetaState state, const Objective& objective, const world::Dataset& data,
                     const EpisodeShape& shape, std::size_t iterations, Rng& rng, const IterationHook& hook = {});

nlohmann::json to_json(const MetaConfig& config);
MetaConfig meta_config_from_json(const nlohmann::json& doc);
nlohmann::json to_json(const MetaState& state);
MetaState meta_state_from_json(const nlohmann::json& doc);

}  // namespace cotsm::meta
