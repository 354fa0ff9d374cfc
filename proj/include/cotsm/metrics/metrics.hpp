#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotsm/models/vision_encoder.hpp"
#include "cotsm/world/dataset.hpp"

namespace cotsm::metrics {

using world::Tokens;

struct ScoredPair {
    Tokens candidate;
    std::vector<Tokens> references;  // non-empty
    Tensor image_feature;
    world::Scene scene;
};

// Corpus BLEU@n without smoothing; `sentence_level` averages per-pair scores instead.
double bleu(std::span<const ScoredPair> pairs, int n, bool sentence_level = false);

// Mean over pairs of the best LCS F1 against any reference.
double rouge_l(std::span<const ScoredPair> pairs);

// Length of the longest common subsequence.
std::size_t lcs_length(const Tokens& a, const Tokens& b);

// Plain CIDEr (orders 1-4, x10) with document frequencies over the reference corpus.
double cider(std::span<const ScoredPair> pairs);

// Bag-of-words caption embedding in image-feature space: content words map to their
// vision-encoder code, repeated across the subject/object/verb blocks, averaged and
// pushed through the encoder's projection. Function and unknown words are ignored.
class CaptionEncoder {
public:
    CaptionEncoder(const models::VisionEncoder& vision, const world::Grammar& grammar);
    [[nodiscard]] Tensor encode(const Tokens& caption) const;

private:
    const models::VisionEncoder& vision_;
    const world::Grammar& grammar_;
};

struct RetrievalResult {
    double mrr = 0.0;
    std::array<double, 3> recall{};  // @1, @5, @10
    bool small_pool = false;         // fewer captions than some k
};

// Each image ranks its own generated caption among all generated captions by cosine
// score; ties go to the lower caption index.
RetrievalResult retrieval_recall(std::span<const ScoredPair> pairs, const CaptionEncoder& encoder);

struct Coverage {
    double exact_noun = 0.0;
    double exact_verb = 0.0;
    double fuzzy_noun = 0.0;
    double fuzzy_verb = 0.0;
};

// Percent of reference nouns/verbs (union over references) found in the candidate.
Coverage content_coverage(std::span<const ScoredPair> pairs, const world::Grammar& grammar);

struct MetricReport {
    std::array<double, 4> bleu{};
    double rouge_l = 0.0;
    double cider = 0.0;
    double mrr = 0.0;
    std::array<double, 3> recall_at{};
    double exact_noun = 0.0;
    double exact_verb = 0.0;
    double fuzzy_noun = 0.0;
    double fuzzy_verb = 0.0;
    bool small_retrieval_pool = false;
    std::size_t pairs = 0;
};

MetricReport evaluate(std::span<const ScoredPair> pairs, const CaptionEncoder& encoder, const world::Grammar& grammar);

nlohmann::json to_json(const MetricReport& report);
std::string csv_header();
std::string csv_row(const MetricReport& report);

}  // namespace cotsm::metrics
