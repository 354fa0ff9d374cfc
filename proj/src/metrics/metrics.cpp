#include "cotsm/metrics/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "cotsm/errors.hpp"
#include "cotsm/numerics/kernels.hpp"

namespace cotsm::metrics {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, double>;

Counts ngram_counts(const Tokens& s, int n) {
    Counts c;
    const auto len = static_cast<int>(s.size());
    for (int i = 0; i + n <= len; ++i) c[NGram(s.begin() + i, s.begin() + i + n)] += 1.0;
    return c;
}

// Clipped matches and candidate n-gram total for one pair at order n.
std::pair<double, double> clipped(const ScoredPair& p, int n) {
    const auto cand = ngram_counts(p.candidate, n);
    std::map<NGram, double> max_ref;
    for (const auto& r : p.references)
        for (const auto& [g, c] : ngram_counts(r, n)) max_ref[g] = std::max(max_ref[g], c);
    double match = 0.0, total = 0.0;
    for (const auto& [g, c] : cand) {
        total += c;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) match += std::min(c, it->second);
    }
    return {match, total};
}

// Reference length closest to the candidate length; the shorter one on ties.
double closest_ref_length(const ScoredPair& p) {
    const double c = static_cast<double>(p.candidate.size());
    double best = static_cast<double>(p.references.front().size());
    for (const auto& r : p.references) {
        const double len = static_cast<double>(r.size());
        if (std::abs(len - c) < std::abs(best - c) || (std::abs(len - c) == std::abs(best - c) && len < best))
            best = len;
    }
    return best;
}

double bleu_from(std::span<const ScoredPair> pairs, int n) {
    double c_len = 0.0, r_len = 0.0, product = 1.0;
    for (int k = 1; k <= n; ++k) {
        double match = 0.0, total = 0.0;
        for (const auto& p : pairs) {
            const auto [m, t] = clipped(p, k);
            match += m;
            total += t;
        }
        if (total == 0.0 || match == 0.0) return 0.0;
        product *= match / total;
    }
    for (const auto& p : pairs) {
        c_len += static_cast<double>(p.candidate.size());
        r_len += closest_ref_length(p);
    }
    if (c_len == 0.0) return 0.0;
    const double bp = std::exp(std::min(0.0, 1.0 - r_len / c_len));
    return bp * std::pow(product, 1.0 / n);
}

void check_pairs(std::span<const ScoredPair> pairs, const char* who) {
    if (pairs.empty()) throw ContractError(std::string(who) + ": empty corpus");
    for (const auto& p : pairs)
        if (p.references.empty()) throw ContractError(std::string(who) + ": pair without references");
}

}  // namespace

double bleu(std::span<const ScoredPair> pairs, int n, bool sentence_level) {
    if (n < 1 || n > 4) throw ContractError("bleu: order must lie in [1, 4]");
    check_pairs(pairs, "bleu");
    if (!sentence_level) return bleu_from(pairs, n);
    double sum = 0.0;
    for (const auto& p : pairs) sum += bleu_from(std::span<const ScoredPair>(&p, 1), n);
    return sum / static_cast<double>(pairs.size());
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
    std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
    for (std::size_t i = 1; i <= a.size(); ++i) {
        for (std::size_t j = 1; j <= b.size(); ++j)
            cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return prev[b.size()];
}

double rouge_l(std::span<const ScoredPair> pairs) {
    check_pairs(pairs, "rouge_l");
    double sum = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        if (!p.candidate.empty())
            for (const auto& r : p.references) {
                const double lcs = static_cast<double>(lcs_length(p.candidate, r));
                if (lcs == 0.0 || r.empty()) continue;
                const double prec = lcs / double(p.candidate.size()), rec = lcs / double(r.size());
                best = std::max(best, 2.0 * prec * rec / (prec + rec));
            }
        sum += best;
    }
    return sum / static_cast<double>(pairs.size());
}

double cider(std::span<const ScoredPair> pairs) {
    check_pairs(pairs, "cider");
    if (pairs.size() < 2) throw ContractError("cider: document frequencies need at least two images");
    const double images = static_cast<double>(pairs.size());
    double total = 0.0;
    std::vector<double> per_pair(pairs.size(), 0.0);
    for (int n = 1; n <= 4; ++n) {
        std::map<NGram, double> df;
        for (const auto& p : pairs) {
            std::set<NGram> seen;
            for (const auto& r : p.references)
                for (const auto& [g, _] : ngram_counts(r, n)) seen.insert(g);
            for (const auto& g : seen) df[g] += 1.0;
        }
        auto tfidf = [&](const Tokens& s) {
            auto v = ngram_counts(s, n);
            for (auto& [g, c] : v) {
                const auto it = df.find(g);
                c *= std::log(images / std::max(1.0, it == df.end() ? 0.0 : it->second));
            }
            return v;
        };
        auto squared_norm = [](const Counts& v) {
            double s = 0.0;
            for (const auto& [_, x] : v) s += x * x;
            return s;
        };
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto cand = tfidf(pairs[i].candidate);
            const double nc = squared_norm(cand);
            double sim = 0.0;
            for (const auto& r : pairs[i].references) {
                const auto ref = tfidf(r);
                const double nr = squared_norm(ref);
                if (nc == 0.0 || nr == 0.0) continue;
                double dot = 0.0;
                for (const auto& [g, x] : cand) {
                    const auto it = ref.find(g);
                    if (it != ref.end()) dot += x * it->second;
                }
                sim += dot / std::sqrt(nc * nr);
            }
            per_pair[i] += sim / static_cast<double>(pairs[i].references.size());
        }
    }
    for (double s : per_pair) total += 10.0 * s / 4.0;
    return total / images;
}

CaptionEncoder::CaptionEncoder(const models::VisionEncoder& vision, const world::Grammar& grammar)
    : vision_(vision), grammar_(grammar) {}

Tensor CaptionEncoder::encode(const Tokens& caption) const {
    const std::size_t d = vision_.config().code_dim;
    std::vector<double> bag(3 * d, 0.0);
    double count = 0.0;
    for (const auto& w : caption) {
        if (!grammar_.pos.contains(w) || grammar_.pos_of(w) == world::Pos::function) continue;
        const auto& e = vision_.word_embedding(grammar_.canonical(w));
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t j = 0; j < d; ++j) bag[b * d + j] += e[j];
        count += 1.0;
    }
    std::vector<double> out(vision_.feature_dim(), 0.0);
    if (count > 0.0) {
        for (auto& x : bag) x /= count;
        kernels::gemm(bag, vision_.projection().data(), out, 1, 3 * d, vision_.feature_dim());
    }
    return Tensor(Shape{vision_.feature_dim()}, std::move(out));
}

namespace {

double cosine(const Tensor& a, const Tensor& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    return na == 0.0 || nb == 0.0 ? 0.0 : dot / std::sqrt(na * nb);
}

}  // namespace

RetrievalResult retrieval_recall(std::span<const ScoredPair> pairs, const CaptionEncoder& encoder) {
    if (pairs.size() < 2) throw ContractError("retrieval: needs at least two pairs");
    std::vector<Tensor> captions;
    for (const auto& p : pairs) captions.push_back(encoder.encode(p.candidate));
    constexpr std::array<std::size_t, 3> ks{1, 5, 10};
    RetrievalResult r;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const double own = cosine(pairs[i].image_feature, captions[i]);
        std::size_t rank = 1;
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            if (j == i) continue;
            const double s = cosine(pairs[i].image_feature, captions[j]);
            if (s > own || (s == own && j < i)) ++rank;
        }
        r.mrr += 1.0 / static_cast<double>(rank);
        for (std::size_t k = 0; k < ks.size(); ++k)
            if (rank <= ks[k]) r.recall[k] += 1.0;
    }
    const double n = static_cast<double>(pairs.size());
    r.mrr /= n;
    for (auto& x : r.recall) x /= n;
    r.small_pool = pairs.size() < ks.back();
    return r;
}

Coverage content_coverage(std::span<const ScoredPair> pairs, const world::Grammar& grammar) {
    double sums[4] = {0, 0, 0, 0};
    double counts[2] = {0, 0};
    auto words_of = [&](const Tokens& s, world::Pos pos) {
        std::set<std::string> out;
        for (const auto& w : s)
            if (grammar.pos.contains(w) && grammar.pos_of(w) == pos) out.insert(w);
        return out;
    };
    for (const auto& p : pairs) {
        for (int k = 0; k < 2; ++k) {
            const auto pos = k == 0 ? world::Pos::noun : world::Pos::verb;
            std::set<std::string> ref;
            for (const auto& r : p.references) ref.merge(words_of(r, pos));
            if (ref.empty()) continue;
            const auto gen = words_of(p.candidate, pos);
            double exact = 0.0, fuzzy = 0.0;
            for (const auto& w : ref) {
                if (gen.contains(w)) exact += 1.0;
                if (std::any_of(gen.begin(), gen.end(), [&](const std::string& g) { return grammar.are_synonyms(g, w); }))
                    fuzzy += 1.0;
            }
            sums[2 * k] += exact / double(ref.size());
            sums[2 * k + 1] += fuzzy / double(ref.size());
            counts[k] += 1.0;
        }
    }
    auto pct = [](double s, double c) { return c > 0.0 ? 100.0 * s / c : 0.0; };
    return {pct(sums[0], counts[0]), pct(sums[2], counts[1]), pct(sums[1], counts[0]), pct(sums[3], counts[1])};
}

MetricReport evaluate(std::span<const ScoredPair> pairs, const CaptionEncoder& encoder, const world::Grammar& grammar) {
    MetricReport r;
    r.pairs = pairs.size();
    for (int n = 1; n <= 4; ++n) r.bleu[static_cast<std::size_t>(n - 1)] = bleu(pairs, n);
    r.rouge_l = rouge_l(pairs);
    r.cider = cider(pairs);
    const auto ret = retrieval_recall(pairs, encoder);
    r.mrr = ret.mrr;
    r.recall_at = ret.recall;
    r.small_retrieval_pool = ret.small_pool;
    const auto cov = content_coverage(pairs, grammar);
    r.exact_noun = cov.exact_noun;
    r.exact_verb = cov.exact_verb;
    r.fuzzy_noun = cov.fuzzy_noun;
    r.fuzzy_verb = cov.fuzzy_verb;
    return r;
}

nlohmann::json to_json(const MetricReport& r) {
    return {{"bleu", r.bleu},
            {"rouge_l", r.rouge_l},
            {"cider", r.cider},
            {"mrr", r.mrr},
            {"recall_at", {{"1", r.recall_at[0]}, {"5", r.recall_at[1]}, {"10", r.recall_at[2]}}},
            {"exact_noun", r.exact_noun},
            {"exact_verb", r.exact_verb},
            {"fuzzy_noun", r.fuzzy_noun},
            {"fuzzy_verb", r.fuzzy_verb},
            {"small_retrieval_pool", r.small_retrieval_pool},
            {"pairs", r.pairs}};
}

std::string csv_header() {
    return "bleu1,bleu2,bleu3,bleu4,rouge_l,cider,mrr,r_at_1,r_at_5,r_at_10,exact_noun,exact_verb,fuzzy_noun,"
           "fuzzy_verb,pairs";
}

std::string csv_row(const MetricReport& r) {
    std::ostringstream out;
    out.precision(6);
    out << std::fixed;
    for (double b : r.bleu) out << b << ',';
    out << r.rouge_l << ',' << r.cider << ',' << r.mrr << ',';
    for (double x : r.recall_at) out << x << ',';
    out << r.exact_noun << ',' << r.exact_verb << ',' << r.fuzzy_noun << ',' << r.fuzzy_verb << ',' << r.pairs;
    return out.str();
}

}  // namespace cotsm::metrics
