#include "cotsm/models/pretrain.hpp"

#include <cmath>
#include <numeric>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/optim.hpp"
#include "cotsm/world/dataset.hpp"

namespace cotsm::models {

using ad::Var;

std::vector<LmExample> build_lm_corpus(std::span<const world::Grammar* const> grammars, const Tokenizer& tokenizer,
                                       const CorpusConfig& config, Rng& rng) {
    const double total = std::accumulate(config.format_weights.begin(), config.format_weights.end(), 0.0);
    if (!(total > 0.0)) throw ConfigError("corpus.format_weights: need a positive weight");
    if (config.scenes_per_pair < 1) throw ConfigError("corpus.scenes_per_pair: must be positive");

    auto pick_format = [&] {
        double u = rng.uniform() * total;
        for (std::size_t i = 0; i < 3; ++i) {
            if (u < config.format_weights[i]) return i;
            u -= config.format_weights[i];
        }
        return std::size_t{3};
    };

    std::vector<LmExample> corpus;
    for (const auto* grammar : grammars) {
        for (const auto& subject : grammar->subjects) {
            for (const auto& object : grammar->objects) {
                for (int r = 0; r < config.scenes_per_pair; ++r) {
                    const auto verbs = grammar->verbs_for(subject.category, object);
                    const world::Scene scene{subject.word, object, verbs[rng.below(verbs.size())], 0};
                    const auto caption = tokenizer.encode(world::realize_captions(*grammar, scene, rng, 1).front());
                    const auto sub = tokenizer.id(scene.subject), obj = tokenizer.id(scene.object),
                               verb = tokenizer.id(scene.verb);

                    LmExample ex;
                    ex.tokens.push_back(Tokenizer::kBos);
                    switch (pick_format()) {
                        case 0: ex.tokens.insert(ex.tokens.end(), {sub, Tokenizer::kSep, obj, Tokenizer::kSep}); break;
                        case 1: break;
                        case 2: ex.tokens.insert(ex.tokens.end(), {sub, Tokenizer::kSep}); break;
                        default: ex.tokens.insert(ex.tokens.end(), {obj, Tokenizer::kSep}); break;
                    }
                    ex.tokens.insert(ex.tokens.end(), caption.begin(), caption.end());
                    ex.tokens.push_back(Tokenizer::kEos);

                    const std::array<std::size_t, 4> slots{sub, obj, verb, Tokenizer::kPad};
                    const auto n_hints = rng.below(config.max_hints + 1);
                    for (std::size_t i = 0; i < n_hints; ++i) ex.hints.push_back(slots[rng.below(slots.size())]);
                    corpus.push_back(std::move(ex));
                }
            }
        }
    }
    return corpus;
}

namespace {

// Next-token cross-entropy of one example, summed over its predicted tokens.
Var example_loss(const TinyLM& lm, const LmExample& ex) {
    if (ex.tokens.size() < 2) throw ContractError("pretrain: sequences need at least two tokens");
    const std::span<const std::size_t> all(ex.tokens);
    std::vector<Var> prompts;
    if (!ex.hints.empty()) prompts.push_back(lm.embed(ex.hints));
    const Var logits = lm.forward(prompts, all.first(all.size() - 1));
    const double n = static_cast<double>(all.size() - 1);
    return ad::scale(ad::cross_entropy(logits, all.subspan(1)), n);
}

}  // namespace

double lm_cross_entropy(const TinyLM& lm, std::span<const LmExample> examples) {
    ad::NoGradGuard no_grad;
    double total = 0.0, count = 0.0;
    for (const auto& ex : examples) {
        total += example_loss(lm, ex).value().item();
        count += static_cast<double>(ex.tokens.size() - 1);
    }
    return count > 0.0 ? total / count : 0.0;
}

TinyLM lm_pretrain(TinyLM lm, const std::vector<LmExample>& corpus, const PretrainConfig& config, Rng& rng,
                   PretrainReport* report) {
    if (corpus.empty()) throw ConfigError("pretrain: corpus is empty");
    if (config.epochs < 0) throw ConfigError("pretrain.epochs: must be non-negative");
    if (!(config.lr > 0.0)) throw ConfigError("pretrain.lr: must be positive");
    if (config.batch == 0) throw ConfigError("pretrain.batch: must be positive");
    if (!(config.holdout_fraction >= 0.0 && config.holdout_fraction < 1.0))
        throw ConfigError("pretrain.holdout_fraction: must lie in [0, 1)");

    std::vector<std::size_t> order(corpus.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(std::span<std::size_t>(order));
    const auto heldout_n = static_cast<std::size_t>(std::floor(config.holdout_fraction * double(corpus.size())));
    const std::vector<std::size_t> heldout(order.begin(), order.begin() + static_cast<long>(heldout_n));
    std::vector<std::size_t> train(order.begin() + static_cast<long>(heldout_n), order.end());
    if (train.empty()) throw ConfigError("pretrain: no training sequences left after the held-out split");

    lm.unfreeze();
    auto params = lm.parameters();
    std::vector<AdamWState> states;
    for (const auto& p : params) states.push_back(AdamWState::for_param(p.value));

    std::vector<double> epoch_loss;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        rng.shuffle(std::span<std::size_t>(train));
        double loss_sum = 0.0, token_sum = 0.0;
        for (std::size_t start = 0; start < train.size(); start += config.batch) {
            const auto end = std::min(train.size(), start + config.batch);
            std::vector<Var> losses;
            double tokens = 0.0;
            for (std::size_t i = start; i < end; ++i) {
                losses.push_back(example_loss(lm, corpus[train[i]]));
                tokens += static_cast<double>(corpus[train[i]].tokens.size() - 1);
            }
            Var total = losses.front();
            for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
            loss_sum += total.value().item();
            token_sum += tokens;
            const Var loss = ad::scale(total, 1.0 / tokens);
            const auto grads = ad::grad(loss, lm.variables());
            for (std::size_t j = 0; j < params.size(); ++j) {
                auto [next, state] = adamw_step(params[j].value, grads[j].value(), std::move(states[j]), config.lr);
                params[j].value = std::move(next);
                states[j] = std::move(state);
            }
            lm.set_parameters(params);
        }
        epoch_loss.push_back(loss_sum / token_sum);
    }
    lm.freeze();

    if (report) {
        report->train_sequences = train.size();
        report->heldout_sequences = heldout.size();
        report->epoch_loss = epoch_loss;
        // Add-one unigram over predicted tokens of the training slice.
        std::vector<double> counts(lm.config().vocab, 1.0);
        double total = static_cast<double>(counts.size());
        for (auto i : train)
            for (std::size_t t = 1; t < corpus[i].tokens.size(); ++t) {
                counts[corpus[i].tokens[t]] += 1.0;
                total += 1.0;
            }
        double nll = 0.0, n = 0.0;
        std::vector<LmExample> held;
        for (auto i : heldout) {
            held.push_back(corpus[i]);
            for (std::size_t t = 1; t < corpus[i].tokens.size(); ++t) {
                nll -= std::log(counts[corpus[i].tokens[t]] / total);
                n += 1.0;
            }
        }
        report->unigram_ce = n > 0.0 ? nll / n : 0.0;
        report->heldout_ce = lm_cross_entropy(lm, held);
    }
    return lm;
}

}  // namespace cotsm::models
