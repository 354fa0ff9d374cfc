#include "cotsm/world/grammar.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "cotsm/errors.hpp"

namespace cotsm::world {

namespace {

const std::vector<std::string> kSubjectPool = {
    "dog",    "cat",    "horse",  "cow",    "sheep",  "goat",   "bird",   "duck",   "man",    "woman",
    "boy",    "girl",   "child",  "chef",   "doctor", "farmer", "pilot",  "sailor", "student", "teacher",
    "bear",   "fox",    "wolf",   "lion",   "tiger",  "rabbit", "mouse",  "monkey", "robot",  "clown",
    "knight", "king",   "queen",  "baker",  "painter", "dancer", "singer", "player", "driver", "rider",
    "camel",  "zebra",  "panda",  "otter",  "eagle",  "owl",    "frog",   "turtle"};

const std::vector<std::string> kObjectPool = {"ball",  "box",   "kite",  "hat",   "book", "cup",  "chair", "table",
                                              "tree",  "rock",  "fence", "door",  "car",  "bike", "boat",  "bag",
                                              "lamp",  "bench", "rope",  "drum",  "bowl", "plate", "flag", "cake"};

const std::vector<std::string> kVerbPool = {"holds",   "carries", "pushes", "pulls",  "watches", "throws",
                                            "kicks",   "lifts",   "paints", "drops",  "touches", "finds",
                                            "grabs",   "chases",  "follows", "cleans"};

const std::vector<std::pair<std::string, std::string>> kSynonymPool = {
    {"dog", "puppy"},     {"cat", "kitten"},   {"man", "guy"},       {"woman", "lady"},   {"child", "kid"},
    {"boy", "lad"},       {"rabbit", "bunny"}, {"car", "auto"},      {"bike", "bicycle"}, {"cup", "mug"},
    {"rock", "stone"},    {"bag", "sack"},     {"hat", "cap"},       {"book", "novel"},   {"holds", "grips"},
    {"carries", "totes"}, {"pushes", "shoves"}, {"pulls", "drags"},  {"watches", "observes"},
    {"throws", "tosses"}, {"lifts", "raises"}, {"grabs", "seizes"},  {"finds", "spots"},  {"cleans", "washes"},
    {"chases", "pursues"}, {"touches", "taps"}, {"horse", "pony"},   {"boat", "ship"},    {"table", "desk"},
    {"mouse", "rodent"}};

const std::vector<Tokens> kTemplatePool = {{"a", "SUB", "VERB", "a", "OBJ"},       {"the", "SUB", "VERB", "the", "OBJ"},
                                           {"a", "SUB", "VERB", "the", "OBJ"},     {"the", "SUB", "VERB", "a", "OBJ"},
                                           {"one", "SUB", "VERB", "one", "OBJ"},   {"this", "SUB", "VERB", "that", "OBJ"}};

const std::vector<Tokens> kShiftedTemplatePool = {{"there", "is", "a", "SUB", "that", "VERB", "a", "OBJ"},
                                                  {"here", "a", "SUB", "VERB", "the", "OBJ"},
                                                  {"look", "the", "SUB", "VERB", "a", "OBJ"},
                                                  {"a", "SUB", "now", "VERB", "the", "OBJ"},
                                                  {"now", "the", "SUB", "VERB", "this", "OBJ"}};

bool is_slot(const std::string& t) { return t == kSubSlot || t == kVerbSlot || t == kObjSlot; }

std::vector<std::string> function_words_of_pools() {
    std::vector<std::string> out;
    for (const auto* pool : {&kTemplatePool, &kShiftedTemplatePool})
        for (const auto& tpl : *pool)
            for (const auto& t : tpl)
                if (!is_slot(t) && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
    return out;
}

// Takes `count` words from a shuffled copy of `pool`, inventing numbered words if the pool runs out.
std::vector<std::string> draw_words(const std::vector<std::string>& pool, int count, const std::string& stem, Rng& rng) {
    std::vector<std::string> shuffled = pool;
    rng.shuffle(std::span<std::string>(shuffled));
    std::vector<std::string> out;
    for (int i = 0; i < count; ++i)
        out.push_back(static_cast<std::size_t>(i) < shuffled.size() ? shuffled[static_cast<std::size_t>(i)]
                                                                    : stem + std::to_string(i));
    return out;
}

std::vector<std::vector<std::vector<int>>> draw_compatibility(int categories, int objects, int verbs, int max_per_pair,
                                                              Rng& rng) {
    std::vector<std::vector<std::vector<int>>> compat(static_cast<std::size_t>(categories));
    for (auto& per_cat : compat) {
        per_cat.resize(static_cast<std::size_t>(objects));
        for (auto& allowed : per_cat) {
            std::vector<int> all(static_cast<std::size_t>(verbs));
            for (int v = 0; v < verbs; ++v) all[static_cast<std::size_t>(v)] = v;
            rng.shuffle(std::span<int>(all));
            const auto k = 1 + rng.below(static_cast<std::uint64_t>(std::min(max_per_pair, verbs)));
            allowed.assign(all.begin(), all.begin() + static_cast<long>(k));
            std::sort(allowed.begin(), allowed.end());
        }
    }
    return compat;
}

void fill_lexicon(Grammar& g) {
    g.synonyms.clear();
    g.pos.clear();
    for (const auto& w : g.function_words) g.pos[w] = Pos::function;
    for (const auto& s : g.subjects) g.pos[s.word] = Pos::noun;
    for (const auto& o : g.objects) g.pos[o] = Pos::noun;
    for (const auto& v : g.verbs) g.pos[v] = Pos::verb;
    for (const auto& [word, alt] : kSynonymPool) {
        if (!g.pos.contains(word) || g.pos.at(word) == Pos::function || g.pos.contains(alt)) continue;
        std::vector<std::string> set{word, alt};
        std::sort(set.begin(), set.end());
        g.synonyms[word] = set;
        g.synonyms[alt] = set;
        g.pos[alt] = g.pos.at(word);
    }
}

}  // namespace

void GrammarConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& what) {
        throw ConfigError("grammar." + field + ": " + what);
    };
    if (categories < 10) fail("categories", "at least 10 required");
    if (subjects_per_category < 2) fail("subjects_per_category", "at least 2 required");
    if (objects < 10) fail("objects", "at least 10 required");
    if (verbs < 8) fail("verbs", "at least 8 required");
    if (templates < 3) fail("templates", "at least 3 required");
    const auto pool = shifted_templates ? kShiftedTemplatePool.size() : kTemplatePool.size();
    if (static_cast<std::size_t>(templates) > pool) fail("templates", "at most " + std::to_string(pool) + " available");
    if (max_verbs_per_pair < 1) fail("max_verbs_per_pair", "must be positive");
    if (synonym_rate < 0.0 || synonym_rate > 1.0) fail("synonym_rate", "must lie in [0, 1]");
}

Grammar build_grammar(const GrammarConfig& config, Rng& rng) {
    config.validate();
    Grammar g;
    g.categories = config.categories;
    const auto subjects = draw_words(kSubjectPool, config.categories * config.subjects_per_category, "creature", rng);
    for (std::size_t i = 0; i < subjects.size(); ++i)
        g.subjects.push_back({subjects[i], static_cast<int>(i) / config.subjects_per_category});
    g.objects = draw_words(kObjectPool, config.objects, "thing", rng);
    g.verbs = draw_words(kVerbPool, config.verbs, "acts", rng);
    g.compatibility = draw_compatibility(config.categories, config.objects, config.verbs, config.max_verbs_per_pair, rng);
    const auto& pool = config.shifted_templates ? kShiftedTemplatePool : kTemplatePool;
    g.templates.assign(pool.begin(), pool.begin() + config.templates);
    g.synonym_rate = config.synonym_rate;
    g.function_words = function_words_of_pools();
    fill_lexicon(g);
    return g;
}

Grammar build_shifted_grammar(const Grammar& base, const GrammarConfig& config, Rng& rng) {
    Grammar g = base;
    g.compatibility = draw_compatibility(base.categories, static_cast<int>(base.objects.size()),
                                         static_cast<int>(base.verbs.size()), config.max_verbs_per_pair, rng);
    const auto count = std::min<std::size_t>(static_cast<std::size_t>(config.templates), kShiftedTemplatePool.size());
    g.templates.assign(kShiftedTemplatePool.begin(), kShiftedTemplatePool.begin() + static_cast<long>(count));
    return g;
}

int Grammar::category_of(const std::string& subject) const {
    for (const auto& s : subjects)
        if (s.word == subject) return s.category;
    throw LookupError("unknown subject '" + subject + "'");
}

std::vector<std::string> Grammar::subjects_in(int category) const {
    if (category < 0 || category >= categories) throw LookupError("unknown category " + std::to_string(category));
    std::vector<std::string> out;
    for (const auto& s : subjects)
        if (s.category == category) out.push_back(s.word);
    return out;
}

int Grammar::object_index(const std::string& object) const {
    const auto it = std::find(objects.begin(), objects.end(), object);
    if (it == objects.end()) throw LookupError("unknown object '" + object + "'");
    return static_cast<int>(it - objects.begin());
}

int Grammar::verb_index(const std::string& verb) const {
    const auto it = std::find(verbs.begin(), verbs.end(), verb);
    if (it == verbs.end()) throw LookupError("unknown verb '" + verb + "'");
    return static_cast<int>(it - verbs.begin());
}

std::vector<std::string> Grammar::verbs_for(int category, const std::string& object) const {
    if (category < 0 || category >= categories) throw LookupError("unknown category " + std::to_string(category));
    std::vector<std::string> out;
    for (int v : compatibility[static_cast<std::size_t>(category)][static_cast<std::size_t>(object_index(object))])
        out.push_back(verbs[static_cast<std::size_t>(v)]);
    return out;
}

std::vector<std::string> Grammar::synonyms_of(const std::string& word) const {
    const auto it = synonyms.find(word);
    if (it != synonyms.end()) return it->second;
    return {word};
}

bool Grammar::are_synonyms(const std::string& a, const std::string& b) const {
    if (a == b) return true;
    const auto it = synonyms.find(a);
    return it != synonyms.end() && std::find(it->second.begin(), it->second.end(), b) != it->second.end();
}

Pos Grammar::pos_of(const std::string& word) const {
    const auto it = pos.find(word);
    if (it == pos.end()) throw LookupError("word '" + word + "' is not in the vocabulary");
    return it->second;
}

const std::string& Grammar::canonical(const std::string& word) const {
    const auto it = synonyms.find(word);
    if (it == synonyms.end()) return word;
    for (const auto& member : it->second) {
        if (std::any_of(subjects.begin(), subjects.end(), [&](const SubjectEntry& s) { return s.word == member; }) ||
            std::find(objects.begin(), objects.end(), member) != objects.end() ||
            std::find(verbs.begin(), verbs.end(), member) != verbs.end())
            return member;
    }
    return word;
}

std::vector<std::string> Grammar::vocabulary() const {
    std::vector<std::string> out = function_words;
    std::set<std::string> seen(out.begin(), out.end());
    auto push = [&](const std::string& w) {
        if (seen.insert(w).second) out.push_back(w);
    };
    for (const auto& s : subjects) push(s.word);
    for (const auto& o : objects) push(o);
    for (const auto& v : verbs) push(v);
    for (const auto& [word, set] : synonyms)
        for (const auto& member : set) push(member);
    return out;
}

const char* pos_name(Pos pos) {
    switch (pos) {
        case Pos::noun: return "noun";
        case Pos::verb: return "verb";
        case Pos::function: return "function";
    }
    return "function";
}

namespace {

Pos pos_from_name(const std::string& name) {
    if (name == "noun") return Pos::noun;
    if (name == "verb") return Pos::verb;
    if (name == "function") return Pos::function;
    throw DataError("unknown part of speech '" + name + "'");
}

}  // namespace

nlohmann::json to_json(const Grammar& g) {
    nlohmann::json doc;
    doc["categories"] = g.categories;
    doc["subjects"] = nlohmann::json::array();
    for (const auto& s : g.subjects) doc["subjects"].push_back({{"word", s.word}, {"category", s.category}});
    doc["objects"] = g.objects;
    doc["verbs"] = g.verbs;
    doc["compatibility"] = g.compatibility;
    doc["templates"] = g.templates;
    doc["synonyms"] = g.synonyms;
    nlohmann::json pos = nlohmann::json::object();
    for (const auto& [w, p] : g.pos) pos[w] = pos_name(p);
    doc["pos"] = pos;
    doc["synonym_rate"] = g.synonym_rate;
    doc["function_words"] = g.function_words;
    return doc;
}

Grammar grammar_from_json(const nlohmann::json& doc) {
    try {
        Grammar g;
        g.categories = doc.at("categories").get<int>();
        for (const auto& s : doc.at("subjects"))
            g.subjects.push_back({s.at("word").get<std::string>(), s.at("category").get<int>()});
        g.objects = doc.at("objects").get<std::vector<std::string>>();
        g.verbs = doc.at("verbs").get<std::vector<std::string>>();
        g.compatibility = doc.at("compatibility").get<std::vector<std::vector<std::vector<int>>>>();
        g.templates = doc.at("templates").get<std::vector<Tokens>>();
        g.synonyms = doc.at("synonyms").get<std::map<std::string, std::vector<std::string>>>();
        for (const auto& [w, p] : doc.at("pos").items()) g.pos[w] = pos_from_name(p.get<std::string>());
        g.synonym_rate = doc.at("synonym_rate").get<double>();
        g.function_words = doc.at("function_words").get<std::vector<std::string>>();
        return g;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed grammar document: ") + e.what());
    }
}

}  // namespace cotsm::world
