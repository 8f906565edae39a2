#ifndef SCDD_PIPELINE_HPP
#define SCDD_PIPELINE_HPP

#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "config.hpp"

/**
 * @file pipeline.hpp
 * @brief The command-line stages and the artifact layout they share.
 *
 * Every stage reads only what earlier stages wrote and writes only under its own subdirectory of the output directory.
 */

namespace scdd {

/** An input artifact of a stage does not exist. */
class MissingArtifact : public std::runtime_error {
public:
    explicit MissingArtifact(const std::filesystem::path& path)
        : std::runtime_error("missing artifact " + path.string() + " (run the stage that produces it first)"), my_path(path) {}

    const std::filesystem::path& path() const { return my_path; }

private:
    std::filesystem::path my_path;
};

/** File names under the output directory. */
struct ArtifactPaths {
    explicit ArtifactPaths(const std::filesystem::path& out);

    std::filesystem::path root;
    std::filesystem::path counts_matrix, counts_labels;
    std::filesystem::path train_matrix, train_labels, test_matrix, test_labels;
    std::filesystem::path foundation, foundation_loss;
    std::filesystem::path generator, generator_loss;
    std::filesystem::path synthetic_matrix, synthetic_labels, codes, trace;
    std::filesystem::path eval_dir;
    std::filesystem::path aggregate;
};

/** Subcommand names in pipeline order. */
const std::vector<std::string>& stage_names();

/**
 * Runs one stage. `threads` (when nonzero) overrides the evaluation thread count.
 * Throws `ConfigError` for unknown stages, `MissingArtifact` for absent inputs and the module errors otherwise.
 */
void run_stage(const std::string& stage, const RunConfig& cfg, std::size_t threads, std::ostream& log);

}

#endif
