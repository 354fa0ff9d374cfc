#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "cotsm/numerics/rng.hpp"

namespace cotsm::world {

enum class Pos { noun, verb, function };

using Tokens = std::vector<std::string>;

// Template slot markers.
inline constexpr const char* kSubSlot = "SUB";
inline constexpr const char* kVerbSlot = "VERB";
inline constexpr const char* kObjSlot = "OBJ";

struct GrammarConfig {
    int categories = 20;
    int subjects_per_category = 2;
    int objects = 20;
    int verbs = 12;
    int templates = 5;  // 5 references need at least 5 realizations even for synonym-free words
    int max_verbs_per_pair = 3;
    double synonym_rate = 0.3;  // per-slot substitution probability in realize_captions
    bool shifted_templates = false;  // draw templates from the cross-domain pool

    void validate() const;
};

struct SubjectEntry {
    std::string word;
    int category = 0;
    friend bool operator==(const SubjectEntry&, const SubjectEntry&) = default;
};

struct Grammar {
    int categories = 0;
    std::vector<SubjectEntry> subjects;
    std::vector<std::string> objects;
    std::vector<std::string> verbs;
    // compatibility[category][object index] -> allowed verb indices (ascending, non-empty)
    std::vector<std::vector<std::vector<int>>> compatibility;
    std::vector<Tokens> templates;
    // every synonym set contains its own word; symmetric across members
    std::map<std::string, std::vector<std::string>> synonyms;
    std::map<std::string, Pos> pos;
    double synonym_rate = 0.3;
    // Function words of every template pool, so shifted worlds share one vocabulary.
    std::vector<std::string> function_words;

    [[nodiscard]] int category_of(const std::string& subject) const;
    [[nodiscard]] std::vector<std::string> subjects_in(int category) const;
    [[nodiscard]] int object_index(const std::string& object) const;
    [[nodiscard]] int verb_index(const std::string& verb) const;
    [[nodiscard]] std::vector<std::string> verbs_for(int category, const std::string& object) const;
    [[nodiscard]] std::vector<std::string> synonyms_of(const std::string& word) const;
    [[nodiscard]] bool are_synonyms(const std::string& a, const std::string& b) const;
    [[nodiscard]] Pos pos_of(const std::string& word) const;
    // Canonical (grammar-level) form of a surface word: synonyms map to the subject/object/verb they stand for.
    [[nodiscard]] const std::string& canonical(const std::string& word) const;
    // Closed vocabulary, deterministic order: function words, subjects, objects, verbs, then synonym-only words.
    [[nodiscard]] std::vector<std::string> vocabulary() const;

    friend bool operator==(const Grammar&, const Grammar&) = default;
};

Grammar build_grammar(const GrammarConfig& config, Rng& rng);

// Same words and categories, new compatibility map and the cross-domain template pool.
Grammar build_shifted_grammar(const Grammar& base, const GrammarConfig& config, Rng& rng);

nlohmann::json to_json(const Grammar& grammar);
Grammar grammar_from_json(const nlohmann::json& doc);

const char* pos_name(Pos pos);

}  // namespace cotsm::world
