#pragma once

#include <array>
#include <vector>

#include "cotsm/models/tiny_lm.hpp"
#include "cotsm/world/grammar.hpp"

namespace cotsm::models {

// One pretraining sequence. `hints` are token ids whose embeddings are prepended as
// soft tokens, so the model learns to read content words out of its prefix.
struct LmExample {
    TokenIds tokens;
    TokenIds hints;
    friend bool operator==(const LmExample&, const LmExample&) = default;
};

struct CorpusConfig {
    // Relative frequency of the four layouts:
    //   BOS sub SEP obj SEP caption EOS | BOS caption EOS | BOS sub SEP caption EOS | BOS obj SEP caption EOS
    std::array<double, 4> format_weights{0.4, 0.2, 0.2, 0.2};
    std::size_t max_hints = 6;
    int scenes_per_pair = 1;  // scenes drawn for every (subject, object) pair
};

// Realizes the language prior over every category of the grammar(s).
std::vector<LmExample> build_lm_corpus(std::span<const world::Grammar* const> grammars, const Tokenizer& tokenizer,
                                       const CorpusConfig& config, Rng& rng);

struct PretrainConfig {
    int epochs = 30;
    double lr = 1e-3;
    std::size_t batch = 16;
    double holdout_fraction = 0.1;
};

struct PretrainReport {
    std::size_t train_sequences = 0;
    std::size_t heldout_sequences = 0;
    std::vector<double> epoch_loss;  // mean training loss per epoch
    double heldout_ce = 0.0;         // per-token, nats
    double unigram_ce = 0.0;         // add-one unigram model fitted on the training slice
};

// Trains every LM parameter with AdamW on next-token cross-entropy and returns the
// model frozen. The held-out slice is never trained on.
TinyLM lm_pretrain(TinyLM lm, const std::vector<LmExample>& corpus, const PretrainConfig& config, Rng& rng,
                   PretrainReport* report = nullptr);

// Mean per-token cross-entropy of the model over the examples.
double lm_cross_entropy(const TinyLM& lm, std::span<const LmExample> examples);

}  // namespace cotsm::models
