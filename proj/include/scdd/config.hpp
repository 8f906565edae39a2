#ifndef SCDD_CONFIG_HPP
#define SCDD_CONFIG_HPP

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "data.hpp"
#include "distill.hpp"
#include "eval.hpp"
#include "foundation.hpp"
#include "scdg.hpp"

/**
 * @file config.hpp
 * @brief Run configuration read from a sectioned TOML file.
 *
 * Sections: [data], [autoencoder], [scdg], [distill], [eval] and the optional [grid].
 * Keys mirror the fields of the owning module's config struct. Unknown keys are rejected.
 */

namespace scdd {

struct DataSection {
    /** "toy" generates counts; "files" reads `matrix` and `labels`. */
    std::string source = "toy";
    std::string matrix;
    std::string labels;
    ToyConfig toy;
    double min_counts = 10;
    std::size_t min_cells = 3;
    double train_fraction = 0.7;
};

struct EvalSection {
    EvalConfig config;
    std::vector<Architecture> archs{ Architecture::LinearHead };
    /** Methods evaluated by `eval` besides the distilled set: full, random-real, decoder, data-dm, data-dc. */
    std::vector<std::string> baselines{ "full", "random-real" };
    std::size_t hidden = 64;
    std::size_t tokens = 16;
    std::size_t token_width = 32;

    EvalModelSpec model(Architecture arch, std::size_t head_layers) const;
};

struct RunConfig {
    std::uint64_t seed = 0;
    std::string out = "run";
    DataSection data;
    AEConfig autoencoder;
    SCDGConfig scdg;
    DistillConfig distill;
    EvalSection eval;
    std::optional<GridSpec> grid;
    /** Number of distillation seeds per grid cell; the seeds themselves derive from `seed`. */
    std::size_t grid_seeds = 1;

    /** Fans the master seed out to every stage (named substreams) and validates all sections. Call again after changing `seed`. */
    void finalize();

    /** Throws `ConfigError` naming the first invalid field as `section.key`. */
    void validate() const;
};

/** Parses TOML text; `origin` names the source in error messages. Throws `ConfigError`. */
RunConfig parse_run_config(const std::string& text, const std::string& origin);

RunConfig load_run_config(const std::string& path);

}

#endif
