#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cotsm/harness/config.hpp"
#include "cotsm/harness/manifest.hpp"
#include "cotsm/meta/cot_task.hpp"
#include "cotsm/metrics/metrics.hpp"
#include "cotsm/models/tokenizer.hpp"
#include "cotsm/models/vision_encoder.hpp"

namespace cotsm::harness {

struct Run {
    ExperimentConfig config;
    std::string hash;
    RunManifest manifest;
    std::ostream* log = nullptr;  // progress lines; null for silence

    Run(ExperimentConfig config, const std::filesystem::path& out, std::ostream* log = nullptr);
    void note(const std::string& line) const;
};

// Everything gen-world writes, loaded back from verified artifacts.
struct WorldArtifacts {
    world::Grammar grammar;
    world::Grammar shifted;
    world::CategorySplit split;
    world::Dataset train;
    world::Dataset test;
    world::Dataset cross_test;
    models::Tokenizer tokenizer;
    models::VisionEncoder vision;
};
WorldArtifacts load_world(const Run& run);

enum class Domain { in_domain, cross_domain };
const char* domain_name(Domain d);

// One scored group of generated captions.
struct ReportRow {
    std::string method;  // "episodic", "baseline", or an ablation label
    Domain domain = Domain::in_domain;
    metrics::MetricReport metrics;
};

std::string report_csv_header();
std::string report_csv_row(const std::string& config_hash, const ReportRow& row);
nlohmann::json report_json(const std::string& config_hash, const std::vector<ReportRow>& rows);

// Captions joined with their references, image features and scenes.
std::vector<metrics::ScoredPair> scored_pairs(const std::vector<meta::GeneratedCaption>& captions,
                                              const world::Dataset& data, const models::Tokenizer& tokenizer);

struct AblationToggles {
    bool subspace = true;
    bool sub_prompt = true;
    bool obj_prompt = true;
    [[nodiscard]] std::string label() const;
};
// The five toggle rows, all-off first and the full method last.
std::vector<AblationToggles> ablation_rows();
// Episodic training with the toggles applied, scored in-domain; writes nothing.
ReportRow ablation_row(const Run& run, const AblationToggles& toggles);

// Commands. Each reads its inputs through the manifest and records what it writes.
void cmd_gen_world(Run& run);
void cmd_pretrain_lm(Run& run);
void cmd_meta_train(Run& run);
void cmd_meta_test(Run& run);
void cmd_baseline(Run& run);
void cmd_ablate(Run& run);
void cmd_score(Run& run);

// gen-world, pretrain-lm, meta-train, meta-test, baseline, score.
void run_pipeline(Run& run);

}  // namespace cotsm::harness
