#include "cotsm/adaptor/adaptor.hpp"

#include <cmath>

#include "cotsm/errors.hpp"

namespace cotsm::adaptor {

using ad::Var;
using models::Tokenizer;

const char* step_name(CotStep step) {
    switch (step) {
        case CotStep::subject: return "sub";
        case CotStep::object: return "obj";
        case CotStep::caption: return "caption";
    }
    return "?";
}

void AdaptorConfig::validate() const {
    auto fail = [](const char* field, const std::string& why) {
        throw ConfigError(std::string("adaptor.") + field + ": " + why);
    };
    for (auto c : prompt_lengths)
        if (c == 0) fail("prompt_lengths", "every step needs at least one prompt token");
    if (feature_dim == 0) fail("feature_dim", "must be positive");
    if (model_dim == 0) fail("model_dim", "must be positive");
    if (heads == 0 || model_dim % heads != 0) fail("heads", "must divide model_dim");
}

std::vector<CotStep> AdaptorConfig::active_steps() const {
    std::vector<CotStep> out;
    if (sub_prompt) out.push_back(CotStep::subject);
    if (obj_prompt) out.push_back(CotStep::object);
    out.push_back(CotStep::caption);
    return out;
}

std::vector<ParamSlot> adaptor_slots(const AdaptorConfig& config) {
    config.validate();
    std::vector<ParamSlot> slots;
    const auto dv = config.feature_dim, dm = config.model_dim;
    for (auto step : config.active_steps()) {
        const auto k = static_cast<std::size_t>(step);
        slots.push_back({k, "prompt", config.prompt_lengths[k], dm});
        slots.push_back({k, "in_proj", dv, dm});
        if (config.projections) {
            slots.push_back({k, "wq", dm, dm});
            slots.push_back({k, "wk", dm, dm});
            slots.push_back({k, "wv", dm, dm});
        }
        slots.push_back({k, "out_proj", dm, dm});
    }
    return slots;
}

std::vector<AdaptorStep> assemble_steps(const AdaptorConfig& config, std::span<const Var> params) {
    const auto slots = adaptor_slots(config);
    if (params.size() != slots.size())
        throw DimensionError("adaptor: expected " + std::to_string(slots.size()) + " tensors, got " +
                             std::to_string(params.size()));
    std::vector<AdaptorStep> steps;
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const auto& s = slots[i];
        if (params[i].rows() != s.rows || params[i].cols() != s.cols)
            throw DimensionError("adaptor: slot " + s.name + " expects " + std::to_string(s.rows) + "x" +
                                 std::to_string(s.cols) + ", got " + params[i].value().shape_string());
        if (s.name == "prompt") {
            steps.emplace_back();
            steps.back().step = static_cast<CotStep>(s.step);
        }
        auto& st = steps.back();
        if (s.name == "prompt") st.prompt = params[i];
        else if (s.name == "in_proj") st.in_proj = params[i];
        else if (s.name == "wq") st.wq = params[i];
        else if (s.name == "wk") st.wk = params[i];
        else if (s.name == "wv") st.wv = params[i];
        else st.out_proj = params[i];
    }
    return steps;
}

Var adaptor_forward(const AdaptorStep& step, const Var& feature, const AdaptorConfig& config) {
    if (feature.rows() != 1 || feature.cols() != config.feature_dim)
        throw DimensionError("adaptor_forward: feature " + feature.value().shape_string() + " but feature_dim is " +
                             std::to_string(config.feature_dim));
    const std::size_t c = step.prompt.rows();
    const std::array<Var, 2> rows{step.prompt, ad::matmul(feature, step.in_proj)};
    const Var z = ad::concat_rows(rows);
    const bool proj = step.wq.defined();
    const Var q = proj ? ad::matmul(z, step.wq) : z;
    const Var k = proj ? ad::matmul(z, step.wk) : z;
    const Var v = proj ? ad::matmul(z, step.wv) : z;

    const std::size_t h = config.heads, dh = config.model_dim / h;
    std::vector<Var> heads;
    for (std::size_t i = 0; i < h; ++i) {
        const Var qi = h == 1 ? q : ad::slice_cols(q, i * dh, (i + 1) * dh);
        const Var ki = h == 1 ? k : ad::slice_cols(k, i * dh, (i + 1) * dh);
        const Var vi = h == 1 ? v : ad::slice_cols(v, i * dh, (i + 1) * dh);
        Var scores = ad::matmul(qi, ad::transpose(ki));
        if (config.scaled) scores = ad::scale(scores, 1.0 / std::sqrt(static_cast<double>(dh)));
        heads.push_back(ad::matmul(ad::softmax_rows(scores), vi));
    }
    const Var attended = h == 1 ? heads.front() : ad::concat_cols(heads);
    return ad::slice_rows(ad::matmul(attended, step.out_proj), 0, c);
}

PromptChain prompt_chain(std::span<const AdaptorStep> steps, const Var& feature, const AdaptorConfig& config) {
    PromptChain chain;
    for (const auto& s : steps) chain.push_back(adaptor_forward(s, feature, config));
    return chain;
}

void CoTTargets::validate() const {
    if (sub.empty() || obj.empty() || caption.empty()) throw ContractError("cot targets: empty segment");
    if (caption.back() != Tokenizer::kEos) throw ContractError("cot targets: caption must end with EOS");
}

CoTTargets CoTTargets::from_sample(const world::CaptionedSample& sample, std::size_t reference,
                                   const Tokenizer& tokenizer) {
    if (reference >= sample.references.size())
        throw IndexError("cot targets: reference " + std::to_string(reference) + " of " +
                         std::to_string(sample.references.size()));
    CoTTargets t;
    t.sub = {tokenizer.id(sample.scene.subject)};
    t.obj = {tokenizer.id(sample.scene.object)};
    t.caption = tokenizer.encode(sample.references[reference]);
    t.caption.push_back(Tokenizer::kEos);
    return t;
}

StepContext build_step_context(const PromptChain& chain, std::size_t position, const AdaptorConfig& config,
                               const CoTTargets* targets, ContextMode mode, const DecodedSoFar& decoded) {
    const auto active = config.active_steps();
    if (position >= active.size()) throw ContractError("step context: position beyond the active chain");
    if (chain.size() <= position)
        throw ContractError("step context: chain has " + std::to_string(chain.size()) + " entries, need " +
                            std::to_string(position + 1));
    StepContext ctx;
    ctx.prompts.assign(chain.begin(), chain.begin() + static_cast<long>(position + 1));
    ctx.prefix.push_back(Tokenizer::kBos);
    if (!config.condition_on_text) return ctx;
    for (std::size_t i = 0; i < position; ++i) {
        const bool is_sub = active[i] == CotStep::subject;
        const TokenIds* text = nullptr;
        if (mode == ContextMode::train) {
            if (!targets) throw ContractError("step context: train mode needs targets");
            text = is_sub ? &targets->sub : &targets->obj;
        } else {
            const auto& d = is_sub ? decoded.sub : decoded.obj;
            if (!d) throw ContractError(std::string("step context: missing decoded ") + step_name(active[i]));
            text = &*d;
        }
        ctx.prefix.insert(ctx.prefix.end(), text->begin(), text->end());
        ctx.prefix.push_back(Tokenizer::kSep);
    }
    return ctx;
}

namespace {

const TokenIds& target_of(CotStep step, const CoTTargets& t) {
    switch (step) {
        case CotStep::subject: return t.sub;
        case CotStep::object: return t.obj;
        default: return t.caption;
    }
}

}  // namespace

Var step_loss(const PromptChain& chain, std::size_t position, const models::TinyLM& lm, const CoTTargets& targets,
              const AdaptorConfig& config, ContextMode mode, const DecodedSoFar& decoded) {
    const auto ctx = build_step_context(chain, position, config, &targets, mode, decoded);
    const auto& target = target_of(config.active_steps()[position], targets);
    TokenIds input = ctx.prefix;
    input.insert(input.end(), target.begin(), target.end() - 1);
    const Var logits = lm.forward(ctx.prompts, input, ctx.prefix.size() - 1);
    return ad::cross_entropy(logits, target);
}

Var cot_loss(std::span<const AdaptorStep> steps, const models::TinyLM& lm, const Var& feature,
             const CoTTargets& targets, const AdaptorConfig& config) {
    targets.validate();
    const auto chain = prompt_chain(steps, feature, config);
    Var total;
    for (std::size_t i = 0; i < chain.size(); ++i) {
        const Var term = step_loss(chain, i, lm, targets, config, ContextMode::train);
        total = total.defined() ? ad::add(total, term) : term;
    }
    return total;
}

CotOutput generate_from_chain(const PromptChain& chain, const models::TinyLM& lm, const AdaptorConfig& config,
                              const MaxLens& max_lens) {
    const auto active = config.active_steps();
    CotOutput out;
    DecodedSoFar decoded;
    for (std::size_t i = 0; i < active.size(); ++i) {
        const auto ctx = build_step_context(chain, i, config, nullptr, ContextMode::infer, decoded);
        switch (active[i]) {
            case CotStep::subject:
                out.sub = models::greedy_decode(lm, ctx.prompts, ctx.prefix, max_lens.sub);
                decoded.sub = out.sub;
                break;
            case CotStep::object:
                out.obj = models::greedy_decode(lm, ctx.prompts, ctx.prefix, max_lens.obj);
                decoded.obj = out.obj;
                break;
            case CotStep::caption:
                out.caption = models::greedy_decode(lm, ctx.prompts, ctx.prefix, max_lens.caption);
                break;
        }
    }
    return out;
}

CotOutput cot_generate(std::span<const AdaptorStep> steps, const models::TinyLM& lm, const Var& feature,
                       const AdaptorConfig& config, const MaxLens& max_lens) {
    ad::NoGradGuard no_grad;
    return generate_from_chain(prompt_chain(steps, feature, config), lm, config, max_lens);
}

Var feature_var(const Tensor& feature) { return Var::constant(Tensor(1, feature.size(), feature.values())); }

}  // namespace cotsm::adaptor
