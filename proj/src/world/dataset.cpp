#include "cotsm/world/dataset.hpp"

#include <algorithm>
#include <istream>
#include <ostream>
#include <string>

#include "cotsm/errors.hpp"

namespace cotsm::world {

void CategorySplit::check_disjoint() const {
    for (int c : meta_test)
        if (meta_train.contains(c))
            throw DataError("category " + std::to_string(c) + " is in both the meta-train and meta-test split");
}

CategorySplit make_split(int categories, int test_categories, Rng& rng) {
    if (test_categories < 1 || test_categories >= categories)
        throw ConfigError("split.test_categories: must lie in [1, categories)");
    std::vector<int> ids(static_cast<std::size_t>(categories));
    for (int i = 0; i < categories; ++i) ids[static_cast<std::size_t>(i)] = i;
    rng.shuffle(std::span<int>(ids));
    CategorySplit split;
    for (std::size_t i = 0; i < ids.size(); ++i)
        (static_cast<int>(i) < test_categories ? split.meta_test : split.meta_train).insert(ids[i]);
    split.check_disjoint();
    return split;
}

Scene sample_scene(const Grammar& grammar, int category_id, Rng& rng) {
    const auto subjects = grammar.subjects_in(category_id);
    if (subjects.empty()) throw LookupError("category " + std::to_string(category_id) + " has no subjects");
    Scene scene;
    scene.subject = subjects[rng.below(subjects.size())];
    scene.object = grammar.objects[rng.below(grammar.objects.size())];
    const auto verbs = grammar.verbs_for(category_id, scene.object);
    scene.verb = verbs[rng.below(verbs.size())];
    scene.noise_seed = rng.next_u64();
    return scene;
}

namespace {

std::string surface(const Grammar& grammar, const std::string& word, Rng& rng) {
    const auto set = grammar.synonyms_of(word);
    if (set.size() < 2 || !rng.bernoulli(grammar.synonym_rate)) return word;
    std::vector<std::string> others;
    for (const auto& w : set)
        if (w != word) others.push_back(w);
    return others[rng.below(others.size())];
}

Tokens fill(const Tokens& tpl, const std::string& sub, const std::string& verb, const std::string& obj) {
    Tokens out;
    for (const auto& t : tpl) {
        if (t == kSubSlot) out.push_back(sub);
        else if (t == kVerbSlot) out.push_back(verb);
        else if (t == kObjSlot) out.push_back(obj);
        else out.push_back(t);
    }
    return out;
}

}  // namespace

std::vector<Tokens> realize_captions(const Grammar& grammar, const Scene& scene, Rng& rng, int count) {
    if (count < 1 || count > 5) throw ConfigError("references: caption count must lie in [1, 5]");
    if (grammar.templates.empty()) throw ConfigError("grammar has no templates");
    const auto subs = grammar.synonyms_of(scene.subject);
    const auto verbs = grammar.synonyms_of(scene.verb);
    const auto objs = grammar.synonyms_of(scene.object);
    const std::size_t space = grammar.templates.size() * subs.size() * verbs.size() * objs.size();
    if (static_cast<std::size_t>(count) > space)
        throw ConfigError("references: " + std::to_string(count) + " distinct captions requested but only " +
                          std::to_string(space) + " realizations exist");

    std::vector<Tokens> out;
    auto add = [&](Tokens t) {
        if (std::find(out.begin(), out.end(), t) == out.end()) out.push_back(std::move(t));
    };
    for (int attempt = 0; attempt < 200 * count && static_cast<int>(out.size()) < count; ++attempt) {
        const auto& tpl = grammar.templates[rng.below(grammar.templates.size())];
        add(fill(tpl, surface(grammar, scene.subject, rng), surface(grammar, scene.verb, rng),
                 surface(grammar, scene.object, rng)));
    }
    // Rare fallback when sampling keeps hitting duplicates: take the remaining realizations in order.
    for (const auto& tpl : grammar.templates)
        for (const auto& s : subs)
            for (const auto& v : verbs)
                for (const auto& o : objs)
                    if (static_cast<int>(out.size()) < count) add(fill(tpl, s, v, o));
    return out;
}

bool caption_realizes(const Grammar& grammar, const Scene& scene, const Tokens& caption) {
    auto has = [&](const std::string& word) {
        return std::any_of(caption.begin(), caption.end(), [&](const std::string& t) { return grammar.are_synonyms(word, t); });
    };
    return has(scene.subject) && has(scene.verb) && has(scene.object);
}

std::pair<Dataset, Dataset> make_dataset(const Grammar& grammar, const CategorySplit& split, const DatasetSpec& spec,
                                         const FeatureFn& encode, Rng& rng) {
    split.check_disjoint();
    if (spec.per_category < spec.min_per_category)
        throw ConfigError("dataset.per_category: " + std::to_string(spec.per_category) +
                          " samples cannot support episodes needing " + std::to_string(spec.min_per_category));
    Dataset train, test;
    std::uint64_t next_id = 0;
    for (int c = 0; c < grammar.categories; ++c) {
        const bool is_test = split.meta_test.contains(c);
        if (!is_test && !split.meta_train.contains(c)) continue;
        for (int i = 0; i < spec.per_category; ++i) {
            CaptionedSample s;
            s.id = next_id++;
            s.scene = sample_scene(grammar, c, rng);
            s.category_id = c;
            s.references = realize_captions(grammar, s.scene, rng, spec.references);
            s.image_feature = encode(s.scene);
            (is_test ? test : train).push_back(std::move(s));
        }
    }
    return {std::move(train), std::move(test)};
}

std::set<int> categories_in(const Dataset& data) {
    std::set<int> out;
    for (const auto& s : data) out.insert(s.category_id);
    return out;
}

nlohmann::json to_json(const CaptionedSample& s) {
    return {{"id", s.id},
            {"scene", {{"subject", s.scene.subject}, {"object", s.scene.object}, {"verb", s.scene.verb},
                       {"noise_seed", s.scene.noise_seed}}},
            {"category_id", s.category_id},
            {"feature", s.image_feature.values()},
            {"references", s.references}};
}

CaptionedSample sample_from_json(const nlohmann::json& doc) {
    try {
        CaptionedSample s;
        s.id = doc.at("id").get<std::uint64_t>();
        const auto& sc = doc.at("scene");
        s.scene = {sc.at("subject").get<std::string>(), sc.at("object").get<std::string>(),
                   sc.at("verb").get<std::string>(), sc.at("noise_seed").get<std::uint64_t>()};
        s.category_id = doc.at("category_id").get<int>();
        auto feature = doc.at("feature").get<std::vector<double>>();
        const auto n = feature.size();
        s.image_feature = Tensor(Shape{n}, std::move(feature));
        s.references = doc.at("references").get<std::vector<Tokens>>();
        if (s.references.empty() || s.references.size() > 5) throw DataError("sample needs 1-5 references");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw DataError(std::string("malformed sample: ") + e.what());
    }
}

void write_jsonl(std::ostream& out, const Dataset& data) {
    for (const auto& s : data) out << to_json(s).dump() << '\n';
}

Dataset read_jsonl(std::istream& in) {
    Dataset out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        try {
            out.push_back(sample_from_json(nlohmann::json::parse(line)));
        } catch (const nlohmann::json::parse_error& e) {
            throw DataError(std::string("malformed JSONL line: ") + e.what());
        }
    }
    return out;
}

nlohmann::json to_json(const CategorySplit& split) {
    return {{"meta_train", split.meta_train}, {"meta_test", split.meta_test}};
}

CategorySplit split_from_json(const nlohmann::json& doc) {
    CategorySplit s;
    s.meta_train = doc.at("meta_train").get<std::set<int>>();
    s.meta_test = doc.at("meta_test").get<std::set<int>>();
    s.check_disjoint();
    return s;
}

}  // namespace cotsm::world
