#include "cotsm/harness/config.hpp"

#include <fstream>
#include <set>

#include "cotsm/errors.hpp"
#include "cotsm/harness/hash.hpp"

namespace cotsm::harness {

using nlohmann::json;

namespace {

// Typed field reader for one JSON object; remembers which keys it consumed so
// leftovers (typos) can be reported.
class Section {
public:
    Section(const json& doc, std::string path) : doc_(doc), path_(std::move(path)) {
        if (!doc_.is_object()) throw ConfigError(path_ + ": expected an object");
    }

    void get(const char* name, bool& out) { read(name, out, [](const json& j) { return j.is_boolean(); }, "a boolean"); }
    void get(const char* name, double& out) { read(name, out, [](const json& j) { return j.is_number(); }, "a number"); }
    void get(const char* name, int& out) {
        read(name, out, [](const json& j) { return j.is_number_integer(); }, "an integer");
    }
    void get(const char* name, std::size_t& out) {
        read(name, out, [](const json& j) { return j.is_number_unsigned(); }, "a non-negative integer");
    }
    void get(const char* name, std::string& out) {
        read(name, out, [](const json& j) { return j.is_string(); }, "a string");
    }
    template <std::size_t N, typename T>
    void get(const char* name, std::array<T, N>& out) {
        if (!take(name)) return;
        const auto& v = doc_.at(name);
        if (!v.is_array() || v.size() != N)
            throw ConfigError(field(name) + ": expected an array of " + std::to_string(N) + " entries");
        for (std::size_t i = 0; i < N; ++i) {
            const bool ok = std::is_floating_point_v<T> ? v[i].is_number() : v[i].is_number_unsigned();
            if (!ok) throw ConfigError(field(name) + ": entry " + std::to_string(i) + " has the wrong type");
            out[i] = v[i].get<T>();
        }
    }

    [[nodiscard]] bool has(const char* name) const { return doc_.contains(name); }
    Section sub(const char* name) {
        take(name);
        return Section(doc_.at(name), field(name));
    }
    // Consumes `name` without reading it (handled elsewhere).
    void skip(const char* name) { take(name); }
    [[nodiscard]] std::string field(const std::string& name) const { return path_.empty() ? name : path_ + "." + name; }

    void finish() const {
        for (const auto& [key, _] : doc_.items())
            if (!seen_.contains(key)) throw ConfigError(field(key) + ": unknown field");
    }

private:
    bool take(const char* name) {
        if (!doc_.contains(name)) return false;
        seen_.insert(name);
        return true;
    }

    template <typename T, typename Check>
    void read(const char* name, T& out, Check ok, const char* what) {
        if (!take(name)) return;
        const auto& v = doc_.at(name);
        if (!ok(v)) throw ConfigError(field(name) + ": expected " + what);
        out = v.get<T>();
    }

    const json& doc_;
    std::string path_;
    std::set<std::string> seen_;
};

void read_episode(Section& s, meta::EpisodeShape& e) {
    s.get("n_way", e.n_way);
    s.get("k_shot", e.k_shot);
    s.get("l_query", e.l_query);
}

json episode_json(const meta::EpisodeShape& e) { return {{"n_way", e.n_way}, {"k_shot", e.k_shot}, {"l_query", e.l_query}}; }

}  // namespace

void ExperimentConfig::validate() const {
    auto fail = [](const std::string& f, const std::string& why) { throw ConfigError(f + ": " + why); };
    try {
        world.grammar.validate();
    } catch (const ConfigError& e) {
        fail("world", e.what());
    }
    if (world.data.per_category < 2) fail("world.per_category", "must be at least 2");
    if (world.data.references < 1 || world.data.references > 5) fail("world.references", "must lie in [1, 5]");
    if (world.test_categories < 2 || world.test_categories >= world.grammar.categories)
        fail("world.test_categories", "must leave at least one training category and hold out at least two");
    if (vision.code_dim == 0) fail("vision.code_dim", "must be positive");
    if (vision.feature_dim == 0) fail("vision.feature_dim", "must be positive");
    if (!(vision.noise_scale >= 0.0)) fail("vision.noise_scale", "must be non-negative");
    try {
        auto lm_check = lm.model;
        lm_check.vocab = 5;  // placeholder: the tokenizer fixes the real size
        lm_check.validate();
        adaptor.validate();
        meta.engine.validate();
    } catch (const ConfigError& e) {
        fail("config", e.what());
    }
    if (lm.pretrain.epochs < 0) fail("lm.pretrain.epochs", "must be non-negative");
    if (!(lm.pretrain.lr > 0.0)) fail("lm.pretrain.lr", "must be positive");
    if (lm.pretrain.batch == 0) fail("lm.pretrain.batch", "must be positive");
    if (!(lm.pretrain.holdout_fraction >= 0.0 && lm.pretrain.holdout_fraction < 1.0))
        fail("lm.pretrain.holdout_fraction", "must lie in [0, 1)");
    if (meta.init != "xavier") fail("meta.init", "only \"xavier\" is supported");
    for (const auto* e : {&meta.episode, &eval.shape})
        if (e->n_way == 0 || e->k_shot == 0 || e->l_query == 0)
            fail(e == &meta.episode ? "meta.n_way" : "eval.n_way", "episode sizes must be positive");
    if (static_cast<int>(meta.episode.k_shot + meta.episode.l_query) > world.data.per_category)
        fail("meta.k_shot", "k_shot + l_query exceeds world.per_category");
    if (eval.shape.n_way > static_cast<std::size_t>(world.test_categories))
        fail("eval.n_way", "more ways than held-out categories");
    if (!(eval.alpha >= 0.0)) fail("eval.alpha", "must be non-negative");
    if (eval.inner_steps == 0) fail("eval.inner_steps", "must be at least 1");
    if (eval.episodes == 0) fail("eval.episodes", "must be at least 1");
    if (baseline.train.batch == 0) fail("baseline.batch", "must be positive");
    if (!(baseline.train.lr > 0.0)) fail("baseline.lr", "must be positive");
}

ExperimentConfig config_from_json(const json& doc) {
    ExperimentConfig c;
    Section root(doc, "");
    root.get("seed", c.seed);

    if (root.has("world")) {
        auto s = root.sub("world");
        auto& g = c.world.grammar;
        s.get("categories", g.categories);
        s.get("subjects_per_category", g.subjects_per_category);
        s.get("objects", g.objects);
        s.get("verbs", g.verbs);
        s.get("templates", g.templates);
        s.get("max_verbs_per_pair", g.max_verbs_per_pair);
        s.get("synonym_rate", g.synonym_rate);
        s.get("per_category", c.world.data.per_category);
        s.get("references", c.world.data.references);
        s.get("test_categories", c.world.test_categories);
        s.get("cross_domain_seed", c.world.cross_domain_seed);
        s.finish();
    }
    if (root.has("vision")) {
        auto s = root.sub("vision");
        s.get("code_dim", c.vision.code_dim);
        s.get("feature_dim", c.vision.feature_dim);
        s.get("noise_scale", c.vision.noise_scale);
        s.finish();
    }
    if (root.has("lm")) {
        auto s = root.sub("lm");
        auto& m = c.lm.model;
        s.get("d_model", m.d_model);
        s.get("layers", m.layers);
        s.get("heads", m.heads);
        s.get("d_ff", m.d_ff);
        s.get("t_max", m.t_max);
        s.get("init_std", m.init_std);
        if (s.has("corpus")) {
            auto k = s.sub("corpus");
            k.get("format_weights", c.lm.corpus.format_weights);
            k.get("max_hints", c.lm.corpus.max_hints);
            k.get("scenes_per_pair", c.lm.corpus.scenes_per_pair);
            k.finish();
        }
        if (s.has("pretrain")) {
            auto p = s.sub("pretrain");
            p.get("epochs", c.lm.pretrain.epochs);
            p.get("lr", c.lm.pretrain.lr);
            p.get("batch", c.lm.pretrain.batch);
            p.get("holdout_fraction", c.lm.pretrain.holdout_fraction);
            p.finish();
        }
        s.finish();
    }
    if (root.has("adaptor")) {
        auto s = root.sub("adaptor");
        auto& a = c.adaptor;
        s.get("prompt_lengths", a.prompt_lengths);
        s.get("projections", a.projections);
        s.get("scaled", a.scaled);
        s.get("heads", a.heads);
        s.get("condition_on_text", a.condition_on_text);
        s.get("sub_prompt", a.sub_prompt);
        s.get("obj_prompt", a.obj_prompt);
        s.finish();
    }
    if (root.has("meta")) {
        auto s = root.sub("meta");
        json engine = json::object();
        for (const auto& [key, value] : doc.at("meta").items()) {
            static const std::set<std::string> own{"init", "n_way", "k_shot", "l_query", "iterations", "checkpoint_every"};
            if (own.contains(key)) continue;
            engine[key] = value;
            s.skip(key.c_str());
        }
        static const std::set<std::string> engine_keys{
            "alpha",  "beta",          "inner_steps",    "batch",        "subspace", "subspace_dim",
            "full_subspace", "basis_init", "update_bases", "second_order", "outer_optimizer", "sum_episodes",
            "adamw",  "workers"};
        for (const auto& [key, _] : engine.items())
            if (!engine_keys.contains(key)) throw ConfigError("meta." + key + ": unknown field");
        c.meta.engine = meta::meta_config_from_json(engine);
        s.get("init", c.meta.init);
        read_episode(s, c.meta.episode);
        s.get("iterations", c.meta.iterations);
        s.get("checkpoint_every", c.meta.checkpoint_every);
        s.finish();
    }
    if (root.has("eval")) {
        auto s = root.sub("eval");
        s.get("episodes", c.eval.episodes);
        read_episode(s, c.eval.shape);
        s.get("alpha", c.eval.alpha);
        s.get("inner_steps", c.eval.inner_steps);
        s.get("max_len_sub", c.eval.max_lens.sub);
        s.get("max_len_obj", c.eval.max_lens.obj);
        s.get("max_len_caption", c.eval.max_lens.caption);
        s.finish();
    }
    if (root.has("baseline")) {
        auto s = root.sub("baseline");
        s.get("batch", c.baseline.train.batch);
        s.get("lr", c.baseline.train.lr);
        s.get("iterations", c.baseline.iterations);
        s.finish();
    }
    root.finish();

    c.lm.model.code_dim = c.vision.code_dim;
    c.adaptor.feature_dim = c.vision.feature_dim;
    c.adaptor.model_dim = c.lm.model.d_model;
    c.baseline.train.adamw = c.meta.engine.adamw;
    c.validate();
    return c;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config: " + path + " is not valid JSON (" + e.what() + ")");
    }
    return config_from_json(doc);
}

json to_json(const ExperimentConfig& c) {
    const auto& g = c.world.grammar;
    json meta = meta::to_json(c.meta.engine);
    meta["init"] = c.meta.init;
    meta.update(episode_json(c.meta.episode));
    meta["iterations"] = c.meta.iterations;
    meta["checkpoint_every"] = c.meta.checkpoint_every;
    json eval = episode_json(c.eval.shape);
    eval.update({{"episodes", c.eval.episodes},
                 {"alpha", c.eval.alpha},
                 {"inner_steps", c.eval.inner_steps},
                 {"max_len_sub", c.eval.max_lens.sub},
                 {"max_len_obj", c.eval.max_lens.obj},
                 {"max_len_caption", c.eval.max_lens.caption}});
    return {{"seed", c.seed},
            {"world",
             {{"categories", g.categories},
              {"subjects_per_category", g.subjects_per_category},
              {"objects", g.objects},
              {"verbs", g.verbs},
              {"templates", g.templates},
              {"max_verbs_per_pair", g.max_verbs_per_pair},
              {"synonym_rate", g.synonym_rate},
              {"per_category", c.world.data.per_category},
              {"references", c.world.data.references},
              {"test_categories", c.world.test_categories},
              {"cross_domain_seed", c.world.cross_domain_seed}}},
            {"vision",
             {{"code_dim", c.vision.code_dim}, {"feature_dim", c.vision.feature_dim}, {"noise_scale", c.vision.noise_scale}}},
            {"lm",
             {{"d_model", c.lm.model.d_model},
              {"layers", c.lm.model.layers},
              {"heads", c.lm.model.heads},
              {"d_ff", c.lm.model.d_ff},
              {"t_max", c.lm.model.t_max},
              {"init_std", c.lm.model.init_std},
              {"corpus",
               {{"format_weights", c.lm.corpus.format_weights},
                {"max_hints", c.lm.corpus.max_hints},
                {"scenes_per_pair", c.lm.corpus.scenes_per_pair}}},
              {"pretrain",
               {{"epochs", c.lm.pretrain.epochs},
                {"lr", c.lm.pretrain.lr},
                {"batch", c.lm.pretrain.batch},
                {"holdout_fraction", c.lm.pretrain.holdout_fraction}}}}},
            {"adaptor",
             {{"prompt_lengths", c.adaptor.prompt_lengths},
              {"projections", c.adaptor.projections},
              {"scaled", c.adaptor.scaled},
              {"heads", c.adaptor.heads},
              {"condition_on_text", c.adaptor.condition_on_text},
              {"sub_prompt", c.adaptor.sub_prompt},
              {"obj_prompt", c.adaptor.obj_prompt}}},
            {"meta", meta},
            {"eval", eval},
            {"baseline",
             {{"batch", c.baseline.train.batch}, {"lr", c.baseline.train.lr}, {"iterations", c.baseline.iterations}}}};
}

std::string config_hash(const ExperimentConfig& config) {
    auto doc = to_json(config);
    doc["meta"].erase("workers");  // thread count never changes results
    return sha256_hex(doc.dump());
}

}  // namespace cotsm::harness
