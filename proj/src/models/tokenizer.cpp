#include "cotsm/models/tokenizer.hpp"

#include "cotsm/errors.hpp"

namespace cotsm::models {

Tokenizer::Tokenizer(std::vector<std::string> words) {
    words_ = {"<bos>", "<eos>", "<sep>", "<pad>"};
    words_.insert(words_.end(), std::make_move_iterator(words.begin()), std::make_move_iterator(words.end()));
    for (std::size_t i = 0; i < words_.size(); ++i)
        if (!index_.emplace(words_[i], i).second) throw DataError("tokenizer: duplicate word '" + words_[i] + "'");
}

Tokenizer Tokenizer::from_grammar(const world::Grammar& grammar) { return Tokenizer(grammar.vocabulary()); }

std::size_t Tokenizer::id(const std::string& word) const {
    const auto it = index_.find(word);
    if (it == index_.end()) throw LookupError("tokenizer: unknown word '" + word + "'");
    return it->second;
}

const std::string& Tokenizer::word(std::size_t id) const {
    if (id >= words_.size()) throw IndexError("tokenizer: id " + std::to_string(id) + " out of range");
    return words_[id];
}

TokenIds Tokenizer::encode(const world::Tokens& tokens) const {
    TokenIds out;
    out.reserve(tokens.size());
    for (const auto& t : tokens) out.push_back(id(t));
    return out;
}

world::Tokens Tokenizer::decode(std::span<const std::size_t> ids, bool skip_specials) const {
    world::Tokens out;
    for (auto i : ids)
        if (!(skip_specials && is_special(i))) out.push_back(word(i));
    return out;
}

}  // namespace cotsm::models
