#include "cotsm/harness/pipeline.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "cotsm/errors.hpp"
#include "cotsm/models/pretrain.hpp"

namespace cotsm::harness {

namespace fs = std::filesystem;
using nlohmann::json;

Run::Run(ExperimentConfig cfg, const fs::path& out, std::ostream* log_stream)
    : config(std::move(cfg)), hash(config_hash(config)), manifest(RunManifest::open(out, hash)), log(log_stream) {
    fs::create_directories(out);
}

void Run::note(const std::string& line) const {
    if (log) *log << line << std::endl;
}

namespace {

Rng root_rng(const Run& run) { return Rng(run.config.seed); }

json read_json(const fs::path& path) {
    std::ifstream in(path);
    try {
        return json::parse(in);
    } catch (const json::exception& e) {
        throw DependencyError("cannot parse " + path.string() + ": " + e.what());
    }
}

void write_text(const Run& run, const std::string& relative, const std::string& text) {
    const auto path = run.manifest.dir() / relative;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + path.string());
}

void write_json(const Run& run, const std::string& relative, const json& doc) { write_text(run, relative, doc.dump(1) + "\n"); }

void write_dataset(const Run& run, const std::string& relative, const world::Dataset& data) {
    std::ostringstream out;
    world::write_jsonl(out, data);
    write_text(run, relative, out.str());
}

world::Dataset read_dataset(const fs::path& path) {
    std::ifstream in(path);
    return world::read_jsonl(in);
}

Tensor codes_for(const Run& run, const models::Tokenizer& tokenizer, const world::Grammar& grammar) {
    return models::semantic_codes(tokenizer, grammar, run.config.vision.code_dim, run.config.seed);
}

models::TinyLM load_lm(const Run& run) {
    auto lm = models::TinyLM::from_json(read_json(run.manifest.require("lm")));
    if (!lm.frozen()) throw DependencyError("lm checkpoint is not frozen");
    return lm;
}

std::string fmt(double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
}

// Iteration log writer; wallclock is informational and excluded from determinism checks.
class TrainLog {
public:
    explicit TrainLog(const Run& run, const std::string& relative) : run_(run), relative_(relative) {
        out_ << "iteration,mean_support_loss,mean_query_loss,wallclock_ms\n";
    }
    void add(const meta::IterationLog& l) {
        out_ << l.iteration << ',' << fmt(l.mean_support_loss) << ',' << fmt(l.mean_query_loss) << ','
             << std::fixed << std::setprecision(3) << l.wallclock_ms << std::defaultfloat << '\n';
    }
    void flush() { write_text(run_, relative_, out_.str()); }

private:
    const Run& run_;
    std::string relative_;
    std::ostringstream out_;
};

std::string iteration_name(std::uint64_t it) {
    std::ostringstream s;
    s << "checkpoints/meta_iter_" << std::setw(6) << std::setfill('0') << it << ".json";
    return s.str();
}

json captions_jsonl_line(const meta::GeneratedCaption& g, const world::Dataset& data, const models::Tokenizer& tok,
                         Domain domain) {
    const auto& s = data.at(g.sample);
    return {{"image_id", s.id},
            {"domain", domain_name(domain)},
            {"episode", g.episode},
            {"sub", tok.decode(g.output.sub)},
            {"obj", tok.decode(g.output.obj)},
            {"candidate", tok.decode(g.output.caption)},
            {"references", s.references}};
}

std::string captions_jsonl(const std::vector<meta::GeneratedCaption>& captions, const world::Dataset& data,
                           const models::Tokenizer& tok, Domain domain) {
    std::string out;
    for (const auto& g : captions) out += captions_jsonl_line(g, data, tok, domain).dump() + "\n";
    return out;
}

// Adaptor config with the toggles of an ablation row applied.
adaptor::AdaptorConfig adaptor_for(const ExperimentConfig& c, const AblationToggles& t) {
    auto a = c.adaptor;
    a.sub_prompt = t.sub_prompt;
    a.obj_prompt = t.obj_prompt;
    return a;
}

meta::MetaState train_episodic(const Run& run, const meta::CotObjective& objective, const world::Dataset& train,
                               const meta::MetaConfig& engine, Rng init, Rng episodes, TrainLog* log,
                               std::vector<std::string>* checkpoints) {
    auto state = meta::init_meta_state(objective.slots(), engine, init);
    const auto every = run.config.meta.checkpoint_every;
    auto hook = [&](const meta::IterationLog& l, const meta::MetaState& s) {
        if (log) log->add(l);
        if (l.iteration % 50 == 0 || l.iteration == run.config.meta.iterations)
            run.note("  iteration " + std::to_string(l.iteration) + "  query loss " + fmt(l.mean_query_loss));
        if (checkpoints && every > 0 && l.iteration % every == 0 && l.iteration < run.config.meta.iterations) {
            const auto name = iteration_name(l.iteration);
            write_json(run, name, meta::to_json(s));
            checkpoints->push_back(name);
        }
    };
    state = meta::meta_train(std::move(state), objective, train, run.config.meta.episode, run.config.meta.iterations,
                             episodes, hook);
    return state;
}

std::vector<meta::GeneratedCaption> evaluate(const meta::MetaState& state, const meta::CotObjective& objective,
                                             const world::CategorySplit& split, const meta::MetaTestConfig& cfg,
                                             Rng rng) {
    return meta::meta_test(state, objective, split.meta_train, cfg, rng);
}

void write_report(Run& run, const std::string& stem, const std::string& command, const std::vector<ReportRow>& rows) {
    write_json(run, "reports/" + stem + ".json", report_json(run.hash, rows));
    std::string csv = report_csv_header() + "\n";
    for (const auto& r : rows) csv += report_csv_row(run.hash, r) + "\n";
    write_text(run, "reports/" + stem + ".csv", csv);
    run.manifest.record("report_" + stem + "_json", "reports/" + stem + ".json", command);
    run.manifest.record("report_" + stem + "_csv", "reports/" + stem + ".csv", command);
}

metrics::MetricReport score(const std::vector<metrics::ScoredPair>& pairs, const WorldArtifacts& w, Domain d) {
    const auto& grammar = d == Domain::in_domain ? w.grammar : w.shifted;
    const metrics::CaptionEncoder enc(w.vision, grammar);
    return metrics::evaluate(pairs, enc, grammar);
}

}  // namespace

const char* domain_name(Domain d) { return d == Domain::in_domain ? "in_domain" : "cross_domain"; }

std::string AblationToggles::label() const {
    auto on = [](bool b) { return b ? "on" : "off"; };
    return std::string("subspace=") + on(subspace) + ";sub_prompt=" + on(sub_prompt) + ";obj_prompt=" + on(obj_prompt);
}

std::vector<AblationToggles> ablation_rows() {
    return {{false, false, false}, {true, false, false}, {true, true, false}, {true, false, true}, {true, true, true}};
}

std::string report_csv_header() { return "config_hash,method,domain," + metrics::csv_header(); }

std::string report_csv_row(const std::string& config_hash, const ReportRow& row) {
    return config_hash + "," + row.method + "," + domain_name(row.domain) + "," + metrics::csv_row(row.metrics);
}

json report_json(const std::string& config_hash, const std::vector<ReportRow>& rows) {
    json out = json::array();
    for (const auto& r : rows)
        out.push_back({{"config_hash", config_hash},
                       {"method", r.method},
                       {"domain", domain_name(r.domain)},
                       {"metrics", metrics::to_json(r.metrics)}});
    return out;
}

std::vector<metrics::ScoredPair> scored_pairs(const std::vector<meta::GeneratedCaption>& captions,
                                              const world::Dataset& data, const models::Tokenizer& tokenizer) {
    std::vector<metrics::ScoredPair> out;
    for (const auto& g : captions) {
        const auto& s = data.at(g.sample);
        out.push_back({tokenizer.decode(g.output.caption), s.references, s.image_feature, s.scene});
    }
    return out;
}

WorldArtifacts load_world(const Run& run) {
    WorldArtifacts w;
    w.grammar = world::grammar_from_json(read_json(run.manifest.require("grammar")));
    w.shifted = world::grammar_from_json(read_json(run.manifest.require("grammar_shifted")));
    w.split = world::split_from_json(read_json(run.manifest.require("split")));
    w.train = read_dataset(run.manifest.require("train"));
    w.test = read_dataset(run.manifest.require("test"));
    w.cross_test = read_dataset(run.manifest.require("cross_test"));
    w.tokenizer = models::Tokenizer::from_grammar(w.grammar);
    w.vision = models::VisionEncoder::from_json(read_json(run.manifest.require("vision")));
    return w;
}

void cmd_gen_world(Run& run) {
    const auto& c = run.config;
    const Rng root = root_rng(run);
    Rng wr = root.stream("world");
    const auto grammar = world::build_grammar(c.world.grammar, wr);
    Rng sr_world(c.seed + c.world.cross_domain_seed);
    const auto shifted = world::build_shifted_grammar(grammar, c.world.grammar, sr_world);
    const auto tokenizer = models::Tokenizer::from_grammar(grammar);
    const auto codes = codes_for(run, tokenizer, grammar);
    Rng vr = root.stream("vision");
    const models::VisionEncoder vision(tokenizer, grammar, codes, c.vision, vr);
    Rng split_rng = root.stream("split");
    const auto split = world::make_split(c.world.grammar.categories, c.world.test_categories, split_rng);
    const auto encode = [&](const world::Scene& s) { return vision.encode(s); };
    Rng dr = root.stream("data");
    auto spec = c.world.data;
    spec.min_per_category = static_cast<int>(std::max(c.meta.episode.k_shot + c.meta.episode.l_query,
                                                      c.eval.shape.k_shot + c.eval.shape.l_query));
    const auto [train, test] = world::make_dataset(grammar, split, spec, encode, dr);
    Rng cr = root.stream("cross-data");
    const auto cross = world::make_dataset(shifted, split, spec, encode, cr).second;

    write_json(run, "world/grammar.json", world::to_json(grammar));
    write_json(run, "world/grammar_shifted.json", world::to_json(shifted));
    write_json(run, "world/split.json", world::to_json(split));
    write_dataset(run, "world/train.jsonl", train);
    write_dataset(run, "world/test.jsonl", test);
    write_dataset(run, "world/cross_test.jsonl", cross);
    write_json(run, "world/vision.json", vision.to_json());
    for (const auto& [name, path] : std::vector<std::pair<std::string, std::string>>{
             {"grammar", "world/grammar.json"},
             {"grammar_shifted", "world/grammar_shifted.json"},
             {"split", "world/split.json"},
             {"train", "world/train.jsonl"},
             {"test", "world/test.jsonl"},
             {"cross_test", "world/cross_test.jsonl"},
             {"vision", "world/vision.json"}})
        run.manifest.record(name, path, "gen-world");
    run.note("gen-world: " + std::to_string(train.size()) + " train, " + std::to_string(test.size()) + " test, " +
             std::to_string(cross.size()) + " cross-domain samples; vocabulary " + std::to_string(tokenizer.size()));
}

void cmd_pretrain_lm(Run& run) {
    const auto w = load_world(run);
    const auto& c = run.config;
    const Rng root = root_rng(run);
    auto lm_cfg = c.lm.model;
    lm_cfg.vocab = w.tokenizer.size();
    Rng init = root.stream("lm-init");
    models::TinyLM lm(lm_cfg, codes_for(run, w.tokenizer, w.grammar), init);
    const world::Grammar* grammars[] = {&w.grammar, &w.shifted};
    Rng corpus_rng = root.stream("corpus");
    const auto corpus = models::build_lm_corpus(grammars, w.tokenizer, c.lm.corpus, corpus_rng);
    run.note("pretrain-lm: " + std::to_string(corpus.size()) + " sequences, " + std::to_string(c.lm.pretrain.epochs) +
             " epochs");
    Rng train_rng = root.stream("pretrain");
    models::PretrainReport report;
    const auto trained = models::lm_pretrain(std::move(lm), corpus, c.lm.pretrain, train_rng, &report);
    write_json(run, "lm/lm.json", trained.to_json());
    write_json(run, "lm/pretrain_report.json",
               {{"config_hash", run.hash},
                {"train_sequences", report.train_sequences},
                {"heldout_sequences", report.heldout_sequences},
                {"epoch_loss", report.epoch_loss},
                {"heldout_ce", report.heldout_ce},
                {"unigram_ce", report.unigram_ce}});
    run.manifest.record("lm", "lm/lm.json", "pretrain-lm");
    run.manifest.record("pretrain_report", "lm/pretrain_report.json", "pretrain-lm");
    run.note("pretrain-lm: held-out CE " + fmt(report.heldout_ce) + " nats/token, unigram " + fmt(report.unigram_ce));
}

void cmd_meta_train(Run& run) {
    const auto w = load_world(run);
    const auto lm = load_lm(run);
    const auto& c = run.config;
    const meta::CotObjective objective(lm, w.tokenizer, c.adaptor, w.train);
    const Rng root = root_rng(run);
    TrainLog log(run, "meta/train_log.csv");
    run.note("meta-train: " + std::to_string(c.meta.iterations) + " iterations of " + std::to_string(c.meta.engine.batch) +
             " episodes");
    std::vector<std::string> checkpoints;
    const auto state = train_episodic(run, objective, w.train, c.meta.engine, root.stream("meta-init"),
                                      root.stream("meta-train"), &log, &checkpoints);
    log.flush();
    for (const auto& name : checkpoints) run.manifest.record(name, name, "meta-train");
    write_json(run, "meta/meta_checkpoint.json", meta::to_json(state));
    run.manifest.record("meta_log", "meta/train_log.csv", "meta-train");
    run.manifest.record("meta_checkpoint", "meta/meta_checkpoint.json", "meta-train");
}

void cmd_meta_test(Run& run) {
    const auto w = load_world(run);
    const auto lm = load_lm(run);
    const auto& c = run.config;
    const auto state = meta::meta_state_from_json(read_json(run.manifest.require("meta_checkpoint")));
    const Rng root = root_rng(run);
    std::vector<ReportRow> rows;
    for (Domain d : {Domain::in_domain, Domain::cross_domain}) {
        const auto& data = d == Domain::in_domain ? w.test : w.cross_test;
        const meta::CotObjective objective(lm, w.tokenizer, c.adaptor, data);
        const auto captions = evaluate(state, objective, w.split, c.eval, root.stream("eval", d == Domain::in_domain ? 0 : 1));
        const auto name = std::string("captions/episodic_") + domain_name(d) + ".jsonl";
        write_text(run, name, captions_jsonl(captions, data, w.tokenizer, d));
        run.manifest.record(std::string("captions_episodic_") + domain_name(d), name, "meta-test");
        rows.push_back({"episodic", d, score(scored_pairs(captions, data, w.tokenizer), w, d)});
        run.note(std::string("meta-test ") + domain_name(d) + ": BLEU@1 " + fmt(rows.back().metrics.bleu[0]) +
                 ", CIDEr " + fmt(rows.back().metrics.cider));
    }
    write_report(run, "meta_test", "meta-test", rows);
}

void cmd_baseline(Run& run) {
    const auto w = load_world(run);
    const auto lm = load_lm(run);
    const auto& c = run.config;
    const meta::CotObjective train_objective(lm, w.tokenizer, c.adaptor, w.train);
    const Rng root = root_rng(run);
    TrainLog log(run, "baseline/train_log.csv");
    Rng train_rng = root.stream("baseline");
    run.note("baseline: " + std::to_string(c.baseline.iterations) + " mini-batches of " +
             std::to_string(c.baseline.train.batch));
    const auto state = meta::baseline_train(train_objective, c.baseline.iterations, c.baseline.train, train_rng,
                                            [&](const meta::IterationLog& l, const meta::MetaState&) { log.add(l); });
    log.flush();
    write_json(run, "baseline/baseline_checkpoint.json", meta::to_json(state));
    run.manifest.record("baseline_log", "baseline/train_log.csv", "baseline");
    run.manifest.record("baseline_checkpoint", "baseline/baseline_checkpoint.json", "baseline");

    auto eval_cfg = c.eval;
    eval_cfg.alpha = 0.0;  // non-episodic: no support adaptation at test time
    std::vector<ReportRow> rows;
    for (Domain d : {Domain::in_domain, Domain::cross_domain}) {
        const auto& data = d == Domain::in_domain ? w.test : w.cross_test;
        const meta::CotObjective objective(lm, w.tokenizer, c.adaptor, data);
        // same episodes as meta-test: identical stream
        const auto captions =
            evaluate(state, objective, w.split, eval_cfg, root.stream("eval", d == Domain::in_domain ? 0 : 1));
        const auto name = std::string("captions/baseline_") + domain_name(d) + ".jsonl";
        write_text(run, name, captions_jsonl(captions, data, w.tokenizer, d));
        run.manifest.record(std::string("captions_baseline_") + domain_name(d), name, "baseline");
        rows.push_back({"baseline", d, score(scored_pairs(captions, data, w.tokenizer), w, d)});
        run.note(std::string("baseline ") + domain_name(d) + ": BLEU@1 " + fmt(rows.back().metrics.bleu[0]));
    }
    write_report(run, "baseline", "baseline", rows);
}

namespace {

ReportRow ablation_row(const Run& run, const WorldArtifacts& w, const models::TinyLM& lm, const AblationToggles& t) {
    const auto& c = run.config;
    const Rng root = root_rng(run);
    const auto a = adaptor_for(c, t);
    const meta::CotObjective train_objective(lm, w.tokenizer, a, w.train);
    const meta::CotObjective test_objective(lm, w.tokenizer, a, w.test);
    auto engine = c.meta.engine;
    engine.subspace = t.subspace;
    run.note("ablate: " + t.label());
    const auto state = train_episodic(run, train_objective, w.train, engine, root.stream("meta-init"),
                                      root.stream("meta-train"), nullptr, nullptr);
    const auto captions = evaluate(state, test_objective, w.split, c.eval, root.stream("eval", 0));
    ReportRow row{t.label(), Domain::in_domain, score(scored_pairs(captions, w.test, w.tokenizer), w, Domain::in_domain)};
    run.note("  BLEU@1 " + fmt(row.metrics.bleu[0]));
    return row;
}

}  // namespace

ReportRow ablation_row(const Run& run, const AblationToggles& toggles) {
    return ablation_row(run, load_world(run), load_lm(run), toggles);
}

void cmd_ablate(Run& run) {
    const auto w = load_world(run);
    const auto lm = load_lm(run);
    std::vector<ReportRow> rows;
    for (const auto& t : ablation_rows()) rows.push_back(ablation_row(run, w, lm, t));
    write_report(run, "ablation", "ablate", rows);
}

void cmd_score(Run& run) {
    const auto w = load_world(run);
    std::vector<ReportRow> rows;
    for (const auto& [name, record] : run.manifest.artifacts()) {
        if (!name.starts_with("captions_")) continue;
        std::ifstream in(run.manifest.require(name));
        std::vector<metrics::ScoredPair> pairs;
        std::string line;
        std::optional<Domain> domain;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) continue;
            try {
                const auto j = json::parse(line);
                const Domain d = j.at("domain").get<std::string>() == "cross_domain" ? Domain::cross_domain
                                                                                     : Domain::in_domain;
                if (domain && *domain != d) throw DataError("mixed domains");
                domain = d;
                const auto& data = d == Domain::in_domain ? w.test : w.cross_test;
                const auto id = j.at("image_id").get<std::uint64_t>();
                const auto it = std::find_if(data.begin(), data.end(), [&](const auto& s) { return s.id == id; });
                if (it == data.end()) throw DataError("unknown image_id " + std::to_string(id));
                pairs.push_back({j.at("candidate").get<world::Tokens>(),
                                 j.at("references").get<std::vector<world::Tokens>>(), it->image_feature, it->scene});
            } catch (const json::exception& e) {
                throw DataError(record.path + ":" + std::to_string(line_no) + ": " + e.what());
            } catch (const DataError& e) {
                throw DataError(record.path + ":" + std::to_string(line_no) + ": " + e.what());
            }
        }
        if (pairs.empty() || !domain) continue;
        const auto method = name.substr(std::string("captions_").size());
        rows.push_back({method.substr(0, method.find('_')), *domain, score(pairs, w, *domain)});
    }
    if (rows.empty()) throw DependencyError("score: no caption files recorded; run meta-test or baseline first");
    write_report(run, "scores", "score", rows);
    for (const auto& r : rows)
        run.note(std::string("score ") + r.method + " " + domain_name(r.domain) + ": BLEU@1 " + fmt(r.metrics.bleu[0]) +
                 ", ROUGE-L " + fmt(r.metrics.rouge_l) + ", CIDEr " + fmt(r.metrics.cider));
}

void run_pipeline(Run& run) {
    cmd_gen_world(run);
    cmd_pretrain_lm(run);
    cmd_meta_train(run);
    cmd_meta_test(run);
    cmd_baseline(run);
    cmd_score(run);
}

}  // namespace cotsm::harness
