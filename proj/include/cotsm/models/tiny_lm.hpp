#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "cotsm/models/tokenizer.hpp"
#include "cotsm/numerics/autodiff.hpp"
#include "cotsm/numerics/rng.hpp"

namespace cotsm::models {

struct LmConfig {
    std::size_t vocab = 0;
    std::size_t code_dim = 16;
    std::size_t d_model = 64;
    std::size_t layers = 2;
    std::size_t heads = 4;
    std::size_t d_ff = 128;
    std::size_t t_max = 64;
    double init_std = 0.02;

    void validate() const;
};

struct NamedTensor {
    std::string name;
    Tensor value;
};

// Small pre-LN causal transformer decoder. Input embeddings are factorised as
// code(token) * embed_proj with the codes fixed, so prompt vectors living in the
// same space as word embeddings can be produced from vision features.
class TinyLM {
public:
    TinyLM() = default;
    TinyLM(const LmConfig& config, Tensor codes, Rng& rng);

    [[nodiscard]] const LmConfig& config() const { return config_; }
    [[nodiscard]] bool frozen() const { return frozen_; }
    // Frozen models expose their weights as constants: no gradient ever reaches them.
    void freeze();
    void unfreeze();

    // Logits [tokens x vocab] for the token positions only. Prompt rows [c_i x d_model]
    // occupy the leading positions as soft tokens. Token positions before `first_logit`
    // are attended to but get no logits row.
    [[nodiscard]] ad::Var forward(std::span<const ad::Var> prompts, std::span<const std::size_t> tokens,
                                  std::size_t first_logit = 0) const;

    // Embeddings [n x d_model] of the given tokens.
    [[nodiscard]] ad::Var embed(std::span<const std::size_t> tokens) const;

    [[nodiscard]] std::vector<NamedTensor> parameters() const;
    // Trainable variables in parameters() order; valid while unfrozen.
    [[nodiscard]] const std::vector<ad::Var>& variables() const { return vars_; }
    void set_parameters(const std::vector<NamedTensor>& params);
    [[nodiscard]] const Tensor& codes() const { return codes_; }

    [[nodiscard]] nlohmann::json to_json() const;
    static TinyLM from_json(const nlohmann::json& doc);

private:
    enum Slot : std::size_t { kEmbedProj = 0, kPos = 1, kHeadW = 2, kHeadB = 3, kFirstBlock = 4 };
    static constexpr std::size_t kPerBlock = 8;  // wq wk wv wo w1 b1 w2 b2

    void rebuild_vars();
    [[nodiscard]] const ad::Var& var(std::size_t i) const { return vars_[i]; }
    [[nodiscard]] ad::Var attention(const ad::Var& x, std::size_t block) const;
    [[nodiscard]] ad::Var feed_forward(const ad::Var& x, std::size_t block) const;

    LmConfig config_;
    Tensor codes_;  // [vocab x code_dim], fixed
    std::vector<NamedTensor> params_;
    std::vector<ad::Var> vars_;
    ad::Var codes_var_;
    bool frozen_ = false;
};

// Greedy decoding: argmax (lowest index on ties) until EOS or max_len tokens; EOS is not returned.
TokenIds greedy_decode(const TinyLM& lm, std::span<const ad::Var> prompts, std::span<const std::size_t> prefix,
                       std::size_t max_len);

}  // namespace cotsm::models
