#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cotsm/errors.hpp"
#include "cotsm/harness/config.hpp"
#include "cotsm/harness/hash.hpp"
#include "cotsm/harness/manifest.hpp"
#include "cotsm/harness/pipeline.hpp"

using namespace cotsm;
using namespace cotsm::harness;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("cotsm_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

void spit(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream(p, std::ios::binary) << text;
}

json tiny_json() { return json::parse(slurp(fs::path(COTSM_TEST_DATA) / "tiny.json")); }
ExperimentConfig tiny() { return config_from_json(tiny_json()); }

std::string config_error_of(const json& doc) {
    try {
        config_from_json(doc).validate();
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_THROW(sha256_file("/nonexistent/file"), DependencyError);
}

TEST(Config, EmptyDocumentGivesDefaults) {
    EXPECT_EQ(config_hash(config_from_json(json::object())), config_hash(ExperimentConfig{}));
}

TEST(Config, ShippedDefaultMatchesBuiltInDefaults) {
    const auto shipped = load_config(std::string(COTSM_SOURCE_DIR) + "/configs/default.json");
    EXPECT_EQ(config_hash(shipped), config_hash(ExperimentConfig{}));
}

TEST(Config, RoundTripKeepsHash) {
    const auto c = tiny();
    const auto back = config_from_json(to_json(c));
    EXPECT_EQ(config_hash(back), config_hash(c));
    EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, HashIgnoresWorkersButNotSeed) {
    auto a = tiny();
    auto b = a;
    b.meta.engine.workers = 4;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.seed += 1;
    EXPECT_NE(config_hash(a), config_hash(b));
    EXPECT_EQ(config_hash(a).size(), 64u);
}

TEST(Config, UnknownFieldNamesItsPath) {
    auto doc = tiny_json();
    doc["meta"]["alhpa"] = 0.1;
    EXPECT_NE(config_error_of(doc).find("meta.alhpa"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["lm"]["pretrain"]["epoch"] = 3;
    EXPECT_NE(config_error_of(doc).find("lm.pretrain.epoch"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["colour"] = "red";
    EXPECT_NE(config_error_of(doc).find("colour"), std::string::npos);
}

TEST(Config, WrongTypeNamesItsPath) {
    auto doc = tiny_json();
    doc["eval"]["episodes"] = "many";
    EXPECT_NE(config_error_of(doc).find("eval.episodes"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["adaptor"]["prompt_lengths"] = json::array({1, 1});
    EXPECT_NE(config_error_of(doc).find("adaptor.prompt_lengths"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["world"] = 3;
    EXPECT_NE(config_error_of(doc).find("world"), std::string::npos);
}

TEST(Config, InvalidValuesAreRejected) {
    auto doc = tiny_json();
    doc["eval"]["alpha"] = -1.0;
    EXPECT_NE(config_error_of(doc).find("eval.alpha"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["world"]["test_categories"] = 10;
    EXPECT_NE(config_error_of(doc).find("world.test_categories"), std::string::npos);
    doc = tiny_json();
    doc["meta"]["k_shot"] = 4;  // 4 + 1 > per_category 4
    EXPECT_NE(config_error_of(doc).find("meta.k_shot"), std::string::npos) << config_error_of(doc);
    doc = tiny_json();
    doc["meta"]["init"] = "zeros";
    EXPECT_NE(config_error_of(doc).find("meta.init"), std::string::npos);
}

TEST(Config, LoadErrors) {
    EXPECT_THROW(load_config("/nonexistent/config.json"), ConfigError);
    const auto dir = fresh_dir("badjson");
    spit(dir / "c.json", "{ \"seed\": ");
    EXPECT_THROW(load_config((dir / "c.json").string()), ConfigError);
    fs::remove_all(dir);
}

TEST(Manifest, RecordRequireAndPersist) {
    const auto dir = fresh_dir("manifest");
    auto m = RunManifest::open(dir, "h1");
    EXPECT_THROW(m.require("a"), DependencyError);
    spit(dir / "sub" / "a.txt", "hello");
    m.record("a", "sub/a.txt", "cmd-a");
    EXPECT_EQ(m.require("a"), dir / "sub" / "a.txt");

    const auto reopened = RunManifest::open(dir, "h1");
    ASSERT_TRUE(reopened.contains("a"));
    const auto& r = reopened.artifacts().at("a");
    EXPECT_EQ(r.sha256, sha256_hex("hello"));
    EXPECT_EQ(r.config_hash, "h1");
    EXPECT_EQ(r.command, "cmd-a");
    EXPECT_EQ(r.path, "sub/a.txt");
    fs::remove_all(dir);
}

TEST(Manifest, StaleAndMissing) {
    const auto dir = fresh_dir("stale");
    auto m = RunManifest::open(dir, "h1");
    spit(dir / "a.txt", "hello");
    m.record("a", "a.txt", "cmd-a");

    EXPECT_THROW(RunManifest::open(dir, "h2").require("a"), StaleArtifactError);

    spit(dir / "a.txt", "hellp");
    EXPECT_THROW(RunManifest::open(dir, "h1").require("a"), StaleArtifactError);

    fs::remove(dir / "a.txt");
    try {
        (void)RunManifest::open(dir, "h1").require("a");
        FAIL() << "expected DependencyError";
    } catch (const StaleArtifactError&) {
        FAIL() << "a vanished file is a dependency error, not a stale one";
    } catch (const DependencyError&) {
    }
    spit(dir / "manifest.json", "not json");
    EXPECT_THROW(RunManifest::open(dir, "h1"), DependencyError);
    fs::remove_all(dir);
}

TEST(Ablation, FiveRowsAllOffFirstFullLast) {
    const auto rows = ablation_rows();
    ASSERT_EQ(rows.size(), 5u);
    EXPECT_FALSE(rows.front().subspace || rows.front().sub_prompt || rows.front().obj_prompt);
    EXPECT_TRUE(rows.back().subspace && rows.back().sub_prompt && rows.back().obj_prompt);
    std::set<std::string> labels;
    for (const auto& r : rows) labels.insert(r.label());
    EXPECT_EQ(labels.size(), 5u);
}

TEST(Pipeline, GenWorldCreatesDirAndIsByteStable) {
    const auto a = fresh_dir("gen_a");
    const auto b = fresh_dir("gen_b");
    {
        harness::Run run(tiny(), a / "nested" / "dir");
        cmd_gen_world(run);
    }
    {
        harness::Run run(tiny(), b);
        cmd_gen_world(run);
        cmd_gen_world(run);  // rerun in place
    }
    for (const auto* f : {"grammar.json", "grammar_shifted.json", "split.json", "train.jsonl", "test.jsonl",
                          "cross_test.jsonl", "vision.json"}) {
        const auto x = slurp(a / "nested" / "dir" / "world" / f);
        EXPECT_FALSE(x.empty()) << f;
        EXPECT_EQ(x, slurp(b / "world" / f)) << f;
    }
    fs::remove_all(a);
    fs::remove_all(b);
}

TEST(Pipeline, DownstreamNeedsUpstream) {
    const auto dir = fresh_dir("deps");
    harness::Run run(tiny(), dir);
    EXPECT_THROW(cmd_pretrain_lm(run), DependencyError);
    cmd_gen_world(run);
    EXPECT_THROW(cmd_meta_train(run), DependencyError);
    EXPECT_THROW(cmd_meta_test(run), DependencyError);
    EXPECT_THROW(cmd_score(run), DependencyError);

    auto other = tiny();
    other.seed += 1;
    harness::Run changed(other, dir);
    EXPECT_THROW(cmd_pretrain_lm(changed), StaleArtifactError);
    fs::remove_all(dir);
}

TEST(Pipeline, TinyRunWritesHashedReports) {
    const auto dir = fresh_dir("tiny");
    harness::Run run(tiny(), dir);
    run_pipeline(run);
    cmd_ablate(run);
    for (const auto* name : {"lm", "pretrain_report", "meta_checkpoint", "meta_log", "baseline_checkpoint",
                             "captions_episodic_in_domain", "captions_episodic_cross_domain",
                             "captions_baseline_in_domain", "report_meta_test_csv", "report_ablation_csv",
                             "report_scores_json", "checkpoints/meta_iter_000002.json"})
        EXPECT_NO_THROW((void)run.manifest.require(name)) << name;

    std::istringstream csv(slurp(dir / "reports" / "ablation.csv"));
    std::string line;
    std::getline(csv, line);
    EXPECT_EQ(line, report_csv_header());
    int rows = 0;
    while (std::getline(csv, line)) {
        ++rows;
        EXPECT_EQ(line.substr(0, 64), run.hash);
    }
    EXPECT_EQ(rows, 5);

    // score re-derives exactly the numbers meta-test reported
    const auto meta = json::parse(slurp(dir / "reports" / "meta_test.json"));
    const auto scores = json::parse(slurp(dir / "reports" / "scores.json"));
    for (const auto& m : meta) {
        bool found = false;
        for (const auto& s : scores)
            if (s["method"] == m["method"] && s["domain"] == m["domain"]) {
                EXPECT_EQ(s["metrics"], m["metrics"]);
                found = true;
            }
        EXPECT_TRUE(found);
    }
    fs::remove_all(dir);
}

TEST(Pipeline, FrozenLmCheckpointIsNotRewrittenByTraining) {
    const auto dir = fresh_dir("frozen");
    harness::Run run(tiny(), dir);
    cmd_gen_world(run);
    cmd_pretrain_lm(run);
    const auto lm = slurp(dir / "lm" / "lm.json");
    const auto vision = slurp(dir / "world" / "vision.json");
    cmd_meta_train(run);
    cmd_baseline(run);
    EXPECT_EQ(slurp(dir / "lm" / "lm.json"), lm);
    EXPECT_EQ(slurp(dir / "world" / "vision.json"), vision);
    EXPECT_NO_THROW((void)run.manifest.require("lm"));
    fs::remove_all(dir);
}

namespace {

int cli(const std::string& args) {
    const int status = std::system((std::string(COTSM_CLI) + " " + args + " >/dev/null 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
    const auto dir = fresh_dir("cli");
    fs::create_directories(dir);
    const auto good = (fs::path(COTSM_TEST_DATA) / "tiny.json").string();
    auto bad_doc = tiny_json();
    bad_doc["meta"]["beta"] = "fast";
    spit(dir / "bad.json", bad_doc.dump());
    auto nan_doc = tiny_json();
    nan_doc["meta"]["beta"] = 1e300;
    nan_doc["meta"]["outer_optimizer"] = "sgd";
    spit(dir / "nan.json", nan_doc.dump());
    const auto out = " --out " + (dir / "run").string();

    EXPECT_EQ(cli("gen-world --config " + (dir / "bad.json").string() + out), 2);
    EXPECT_EQ(cli("gen-world --config " + (dir / "missing.json").string() + out), 2);
    EXPECT_EQ(cli("gen-world" + out), 2);  // --config is required
    EXPECT_EQ(cli("meta-train --config " + good + out), 3);
    EXPECT_EQ(cli("gen-world --config " + good + out), 0);
    EXPECT_EQ(cli("pretrain-lm --config " + good + " --seed 6" + out), 3);  // world made under seed 5
    EXPECT_EQ(cli("pretrain-lm --config " + good + out), 0);

    const auto nan_out = " --out " + (dir / "nan").string();
    EXPECT_EQ(cli("gen-world --config " + (dir / "nan.json").string() + nan_out), 0);
    EXPECT_EQ(cli("pretrain-lm --config " + (dir / "nan.json").string() + nan_out), 0);
    EXPECT_EQ(cli("meta-train --config " + (dir / "nan.json").string() + nan_out), 4);
    fs::remove_all(dir);
}
