#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cotsm/world/grammar.hpp"

namespace cotsm::models {

using TokenIds = std::vector<std::size_t>;

// Closed word-level vocabulary. Specials occupy indices 0-3.
class Tokenizer {
public:
    static constexpr std::size_t kBos = 0;
    static constexpr std::size_t kEos = 1;
    static constexpr std::size_t kSep = 2;
    static constexpr std::size_t kPad = 3;
    static constexpr std::size_t kSpecialCount = 4;

    Tokenizer() = default;
    // `words` excludes the specials; duplicates are rejected.
    explicit Tokenizer(std::vector<std::string> words);
    static Tokenizer from_grammar(const world::Grammar& grammar);

    [[nodiscard]] std::size_t size() const { return words_.size(); }
    [[nodiscard]] std::size_t id(const std::string& word) const;
    [[nodiscard]] bool contains(const std::string& word) const { return index_.contains(word); }
    [[nodiscard]] const std::string& word(std::size_t id) const;
    [[nodiscard]] TokenIds encode(const world::Tokens& tokens) const;
    [[nodiscard]] world::Tokens decode(std::span<const std::size_t> ids, bool skip_specials = true) const;
    [[nodiscard]] const std::vector<std::string>& words() const { return words_; }
    [[nodiscard]] static bool is_special(std::size_t id) { return id < kSpecialCount; }

private:
    std::vector<std::string> words_;
    std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace cotsm::models
