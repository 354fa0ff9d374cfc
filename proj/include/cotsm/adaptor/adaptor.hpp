#pragma once

#include <array>
#include <optional>
#include <span>
#include <vector>

#include "cotsm/models/tiny_lm.hpp"
#include "cotsm/numerics/autodiff.hpp"
#include "cotsm/numerics/param_slot.hpp"
#include "cotsm/world/dataset.hpp"

namespace cotsm::adaptor {

using models::TokenIds;

// The three chain-of-thought steps: p(sub|x) p(obj|sub,x) p(y|obj,sub,x).
enum class CotStep : std::size_t { subject = 0, object = 1, caption = 2 };

const char* step_name(CotStep step);

struct AdaptorConfig {
    std::array<std::size_t, 3> prompt_lengths{1, 1, 4};
    std::size_t feature_dim = 64;
    std::size_t model_dim = 64;
    bool projections = false;  // learned Q/K/V maps inside the attention block
    bool scaled = false;       // 1/sqrt(d) score scaling
    std::size_t heads = 1;
    bool condition_on_text = true;
    bool sub_prompt = true;  // subject step of the chain
    bool obj_prompt = true;  // object step of the chain

    void validate() const;
    // Steps that take part in the chain, in order; the caption step is always last.
    [[nodiscard]] std::vector<CotStep> active_steps() const;
};

// Parameter slots of every active step, grouped by step in chain order. Slot.step holds
// the CotStep index. Per step: prompt [c_k x d_m], in_proj [d_v x d_m], optional wq/wk/wv
// [d_m x d_m], out_proj [d_m x d_m].
std::vector<ParamSlot> adaptor_slots(const AdaptorConfig& config);

struct AdaptorStep {
    CotStep step = CotStep::subject;
    ad::Var prompt;
    ad::Var in_proj;
    ad::Var wq, wk, wv;  // undefined unless projections are on
    ad::Var out_proj;
};

// Groups flat tensors (ordered as adaptor_slots) into per-step adaptors.
std::vector<AdaptorStep> assemble_steps(const AdaptorConfig& config, std::span<const ad::Var> params);

// {p*}_k = first c_k rows of out_proj(softmax(Q K^T) V) over Z = [P_k ; feature * in_proj].
ad::Var adaptor_forward(const AdaptorStep& step, const ad::Var& feature, const AdaptorConfig& config);

// One prompt block per active step, in chain order.
using PromptChain = std::vector<ad::Var>;
PromptChain prompt_chain(std::span<const AdaptorStep> steps, const ad::Var& feature, const AdaptorConfig& config);

struct CoTTargets {
    TokenIds sub;
    TokenIds obj;
    TokenIds caption;  // ends with EOS

    void validate() const;
    static CoTTargets from_sample(const world::CaptionedSample& sample, std::size_t reference,
                                  const models::Tokenizer& tokenizer);
};

enum class ContextMode { train, infer };

struct DecodedSoFar {
    std::optional<TokenIds> sub;
    std::optional<TokenIds> obj;
};

struct StepContext {
    std::vector<ad::Var> prompts;
    TokenIds prefix;
};

// Context of the chain position `position` (index into active_steps()). Train mode takes
// sub/obj text from `targets`, infer mode from `decoded`.
StepContext build_step_context(const PromptChain& chain, std::size_t position, const AdaptorConfig& config,
                               const CoTTargets* targets, ContextMode mode, const DecodedSoFar& decoded = {});

// Sum over active steps of the mean next-token cross-entropy of that step's target.
ad::Var cot_loss(std::span<const AdaptorStep> steps, const models::TinyLM& lm, const ad::Var& feature,
                 const CoTTargets& targets, const AdaptorConfig& config);

// Loss of one chain position under the given context mode.
ad::Var step_loss(const PromptChain& chain, std::size_t position, const models::TinyLM& lm,
                  const CoTTargets& targets, const AdaptorConfig& config, ContextMode mode,
                  const DecodedSoFar& decoded = {});

struct MaxLens {
    std::size_t sub = 1;
    std::size_t obj = 1;
    std::size_t caption = 16;
};

struct CotOutput {
    TokenIds sub;
    TokenIds obj;
    TokenIds caption;
    friend bool operator==(const CotOutput&, const CotOutput&) = default;
};

// Generation from a ready chain, e.g. one with a step's prompts replaced.
CotOutput generate_from_chain(const PromptChain& chain, const models::TinyLM& lm, const AdaptorConfig& config,
                              const MaxLens& max_lens = {});

CotOutput cot_generate(std::span<const AdaptorStep> steps, const models::TinyLM& lm, const ad::Var& feature,
                       const AdaptorConfig& config, const MaxLens& max_lens = {});

// Image feature as a [1 x d_v] constant.
ad::Var feature_var(const Tensor& feature);

}  // namespace cotsm::adaptor
