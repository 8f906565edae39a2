#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "scdd/error.hpp"
#include "scdd/pipeline.hpp"

namespace {

struct Options {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::size_t> threads;
    std::optional<std::uint64_t> seed;
};

int run(const std::string& stage, const Options& opts) {
    scdd::RunConfig cfg;
    try {
        cfg = scdd::load_run_config(opts.config);
        if (opts.out) {
            cfg.out = *opts.out;
        }
        if (opts.seed) {
            cfg.seed = *opts.seed;
            cfg.finalize();
        }
    } catch (const scdd::ConfigError& e) {
        std::cerr << "scdd " << stage << ": invalid config: " << e.what() << "\n";
        return 1;
    }
    try {
        scdd::run_stage(stage, cfg, opts.threads.value_or(0), std::cerr);
    } catch (const scdd::ConfigError& e) {
        std::cerr << "scdd " << stage << ": invalid config: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "scdd " << stage << ": " << e.what() << "\n";
        return 2;
    }
    return 0;
}

}

int main(int argc, char** argv) {
    CLI::App app{ "Latent-code dataset distillation for single-cell expression data" };
    app.require_subcommand(1);
    Options opts;
    std::string chosen;
    for (const auto& name : scdd::stage_names()) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", opts.config, "run configuration (TOML)")->required();
        sub->add_option("--out", opts.out, "output directory (overrides the config)");
        sub->add_option("--threads", opts.threads, "evaluation threads (default: eval.threads, which defaults to 1)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--seed", opts.seed, "master seed (overrides the config)");
        sub->callback([&chosen, name] { chosen = name; });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    return run(chosen, opts);
}
