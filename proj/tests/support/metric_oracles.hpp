#pragma once

// Brute-force metric oracles: explicit n-gram lists, subsequence enumeration and dense
// TF-IDF vectors. Slow on purpose and written without reference to the library code.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "cotsm/metrics/metrics.hpp"
#include "cotsm/numerics/rng.hpp"

namespace cotsm::oracle {

inline std::vector<world::Tokens> all_ngrams(const world::Tokens& s, std::size_t n) {
    std::vector<world::Tokens> out;
    for (std::size_t i = 0; i + n <= s.size(); ++i) out.emplace_back(s.begin() + long(i), s.begin() + long(i + n));
    return out;
}

inline std::size_t occurrences(const world::Tokens& s, const world::Tokens& g) {
    std::size_t c = 0;
    for (const auto& h : all_ngrams(s, g.size())) c += h == g;
    return c;
}

inline double oracle_bleu(const std::vector<metrics::ScoredPair>& pairs, int n) {
    double log_p = 0.0;
    for (int k = 1; k <= n; ++k) {
        double num = 0.0, den = 0.0;
        for (const auto& p : pairs) {
            const auto grams = all_ngrams(p.candidate, std::size_t(k));
            den += double(grams.size());
            // each occurrence counts 1/count toward its n-gram so unique grams are clipped once
            for (const auto& g : grams) {
                std::size_t best = 0;
                for (const auto& r : p.references) best = std::max(best, occurrences(r, g));
                const double count = double(occurrences(p.candidate, g));
                num += std::min(count, double(best)) / count;
            }
        }
        if (num == 0.0 || den == 0.0) return 0.0;
        log_p += std::log(num / den) / n;
    }
    double c = 0.0, r = 0.0;
    for (const auto& p : pairs) {
        c += double(p.candidate.size());
        std::size_t best = p.references[0].size();
        for (const auto& ref : p.references) {
            const auto d = [&](std::size_t len) { return std::abs(double(len) - double(p.candidate.size())); };
            if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) best = ref.size();
        }
        r += double(best);
    }
    if (c == 0.0) return 0.0;
    return (c > r ? 1.0 : std::exp(1.0 - r / c)) * std::exp(log_p);
}

// Longest common subsequence by enumerating every subsequence of the (short) candidate.
inline std::size_t oracle_lcs(const world::Tokens& a, const world::Tokens& b) {
    std::size_t best = 0;
    for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
        world::Tokens sub;
        for (std::size_t i = 0; i < a.size(); ++i)
            if (mask >> i & 1u) sub.push_back(a[i]);
        std::size_t j = 0;
        for (const auto& w : b)
            if (j < sub.size() && w == sub[j]) ++j;
        if (j == sub.size()) best = std::max(best, sub.size());
    }
    return best;
}

inline double oracle_rouge(const std::vector<metrics::ScoredPair>& pairs) {
    double total = 0.0;
    for (const auto& p : pairs) {
        double best = 0.0;
        for (const auto& r : p.references) {
            const double l = double(oracle_lcs(p.candidate, r));
            if (l == 0.0) continue;
            const double prec = l / double(p.candidate.size()), rec = l / double(r.size());
            best = std::max(best, 2.0 * prec * rec / (prec + rec));
        }
        total += best;
    }
    return total / double(pairs.size());
}

// Dense TF-IDF vectors over an explicit n-gram index.
inline double oracle_cider(const std::vector<metrics::ScoredPair>& pairs) {
    const double images = double(pairs.size());
    std::vector<double> score(pairs.size(), 0.0);
    for (std::size_t n = 1; n <= 4; ++n) {
        std::vector<world::Tokens> index;
        auto add = [&](const world::Tokens& s) {
            for (const auto& g : all_ngrams(s, n))
                if (std::find(index.begin(), index.end(), g) == index.end()) index.push_back(g);
        };
        for (const auto& p : pairs) {
            add(p.candidate);
            for (const auto& r : p.references) add(r);
        }
        std::vector<double> idf(index.size());
        for (std::size_t g = 0; g < index.size(); ++g) {
            double df = 0.0;
            for (const auto& p : pairs)
                df += std::any_of(p.references.begin(), p.references.end(),
                                  [&](const world::Tokens& r) { return occurrences(r, index[g]) > 0; });
            idf[g] = std::log(images / std::max(1.0, df));
        }
        auto vec = [&](const world::Tokens& s) {
            std::vector<double> v(index.size());
            for (std::size_t g = 0; g < index.size(); ++g) v[g] = double(occurrences(s, index[g])) * idf[g];
            return v;
        };
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const auto c = vec(pairs[i].candidate);
            double sum = 0.0;
            for (const auto& r : pairs[i].references) {
                const auto v = vec(r);
                double dot = 0.0, nc = 0.0, nr = 0.0;
                for (std::size_t g = 0; g < v.size(); ++g) {
                    dot += c[g] * v[g];
                    nc += c[g] * c[g];
                    nr += v[g] * v[g];
                }
                if (nc > 0.0 && nr > 0.0) sum += dot / std::sqrt(nc * nr);
            }
            score[i] += sum / double(pairs[i].references.size()) / 4.0;
        }
    }
    double total = 0.0;
    for (double s : score) total += 10.0 * s;
    return total / images;
}

// ---- corpora ----------------------------------------------------------------------

inline world::Tokens words(const std::string& text) {
    world::Tokens out;
    std::string w;
    for (char ch : text + " ") {
        if (ch == ' ') {
            if (!w.empty()) out.push_back(w);
            w.clear();
        } else {
            w += ch;
        }
    }
    return out;
}

inline metrics::ScoredPair pair(const std::string& cand, std::vector<std::string> refs) {
    metrics::ScoredPair p;
    p.candidate = words(cand);
    for (const auto& r : refs) p.references.push_back(words(r));
    return p;
}

inline std::vector<metrics::ScoredPair> random_corpus(Rng& rng) {
    const std::size_t vocab = 3 + rng.below(28), n = 2 + rng.below(19);
    auto sentence = [&](std::size_t min_len) {
        world::Tokens s;
        const std::size_t len = min_len + rng.below(9 - min_len);
        for (std::size_t i = 0; i < len; ++i) s.push_back("w" + std::to_string(rng.below(vocab)));
        return s;
    };
    std::vector<metrics::ScoredPair> out(n);
    for (auto& p : out) {
        p.candidate = sentence(0);
        const std::size_t refs = 1 + rng.below(5);
        for (std::size_t r = 0; r < refs; ++r) p.references.push_back(sentence(1));
    }
    return out;
}

}  // namespace cotsm::oracle
