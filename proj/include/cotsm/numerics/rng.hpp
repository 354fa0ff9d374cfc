#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace cotsm {

// xoshiro256** seeded through splitmix64. Every draw is defined here, never through
// <random> distributions, so sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0);

    // Independent generator for a named purpose ("world", "init", "episode", "decode", ...).
    // Depends only on the seed this generator was constructed with, not on draws made so far.
    [[nodiscard]] Rng stream(std::string_view name) const;
    [[nodiscard]] Rng stream(std::string_view name, std::uint64_t index) const;

    std::uint64_t next_u64();
    double uniform();                         // [0, 1)
    double uniform(double lo, double hi);     // [lo, hi)
    std::uint64_t below(std::uint64_t n);     // [0, n), unbiased
    double normal();                          // standard Gaussian (Box-Muller)
    bool bernoulli(double p) { return uniform() < p; }

    template <class T>
    void shuffle(std::span<T> items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    [[nodiscard]] std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::uint64_t s_[4];
};

std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t fnv1a64(std::string_view text);

}  // namespace cotsm
