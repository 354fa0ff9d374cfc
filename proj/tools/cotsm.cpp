#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "cotsm/errors.hpp"
#include "cotsm/harness/config.hpp"
#include "cotsm/harness/pipeline.hpp"

namespace {

enum Exit { ok = 0, failure = 1, config_error = 2, dependency_error = 3, numeric_error = 4 };

struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::string out = "run";
};

using Command = void (*)(cotsm::harness::Run&);

int execute(const Options& opts, Command command) {
    using namespace cotsm;
    try {
        auto config = harness::load_config(opts.config);
        if (opts.seed) config.seed = *opts.seed;
        if (opts.workers) config.meta.engine.workers = *opts.workers;
        config.validate();
        harness::Run run(std::move(config), opts.out, &std::cerr);
        command(run);
        return ok;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return config_error;
    } catch (const DependencyError& e) {  // includes stale artifacts
        std::cerr << "dependency error: " << e.what() << '\n';
        return dependency_error;
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return numeric_error;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return failure;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Chain-of-thought subspace meta-learning on a synthetic captioning world"};
    app.require_subcommand(1);

    Options opts;
    Command chosen = nullptr;
    struct Entry {
        const char* name;
        const char* help;
        Command fn;
    };
    const Entry commands[] = {
        {"gen-world", "grammar, shifted grammar, category split, datasets, vision encoder", cotsm::harness::cmd_gen_world},
        {"pretrain-lm", "pretrain the tiny LM on both grammars and freeze it", cotsm::harness::cmd_pretrain_lm},
        {"meta-train", "episodic subspace meta-training of the adaptors", cotsm::harness::cmd_meta_train},
        {"meta-test", "adapt and caption held-out episodes, in-domain and cross-domain", cotsm::harness::cmd_meta_test},
        {"baseline", "non-episodic adaptor training and evaluation", cotsm::harness::cmd_baseline},
        {"ablate", "subspace and prompt toggles, five rows", cotsm::harness::cmd_ablate},
        {"score", "rescore every captions file into reports/scores", cotsm::harness::cmd_score},
        {"all", "gen-world through score, in order (no ablate)", cotsm::harness::run_pipeline},
    };
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config, "experiment config (JSON)")->required();
        sub->add_option("--seed", opts.seed, "override the root seed");
        sub->add_option("--workers", opts.workers, "episode-parallel threads in meta-train")->check(CLI::PositiveNumber);
        sub->add_option("--out", opts.out, "run directory")->capture_default_str();
        sub->callback([&chosen, fn = fn] { chosen = fn; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : config_error;
    }
    return execute(opts, chosen);
}
