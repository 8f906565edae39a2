#ifndef SCDD_EVAL_HPP
#define SCDD_EVAL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "data.hpp"
#include "distill.hpp"
#include "foundation.hpp"
#include "scdg.hpp"

/**
 * @file eval.hpp
 * @brief Evaluation protocol: fresh classifiers trained on a synthetic set and scored on the original test split.
 */

namespace scdd {

enum class Architecture {
    /** Task head on frozen encoder features. */
    LinearHead,
    /** Logistic regression on normalized expression. */
    Logistic,
    /** Two-layer perceptron on normalized expression. */
    Mlp,
    /** Genes grouped into tokens, attention-pooled, then a linear classifier. */
    Attention
};

std::string to_string(Architecture arch);

/** Accepts "linear-head", "logistic", "mlp" and "attention". */
Architecture parse_architecture(const std::string& text);

struct EvalModelSpec {
    Architecture arch = Architecture::LinearHead;
    /** Linear head: layer count. */
    std::size_t head_layers = 1;
    /** Perceptron hidden width. */
    std::size_t hidden = 64;
    /** Attention: number of contiguous gene groups and the token width. */
    std::size_t tokens = 16;
    std::size_t token_width = 32;

    /** Throws `ConfigError` naming the field. `genes` is the input width of raw-data models. */
    void validate(std::size_t genes) const;
};

struct EvalConfig {
    std::size_t n_trials = 10;
    /** Full-batch SGD steps. */
    std::size_t epochs = 1000;
    /** 0 selects the architecture default from `default_eval_lr`. */
    double lr = 0;
    std::uint64_t seed = 0;
    std::size_t threads = 1;

    void validate() const;
};

double default_eval_lr(Architecture arch);

struct MetricsReport {
    Architecture arch = Architecture::LinearHead;
    std::vector<double> trials;
    double mean = 0;
    /** Sample standard deviation (n - 1); 0 for a single trial. */
    double std = 0;
    EvalConfig config;
    EvalModelSpec model;

    /** Recomputes `mean` and `std` from `trials`. */
    void summarize();
};

/**
 * Trains `cfg.n_trials` freshly initialized models on `synthetic` and scores each on `test`.
 * Trial `i` initializes from a substream named by the architecture and `i`, so different synthetic sets
 * evaluated with the same config see the same initializations.
 * `encoder` is required for the linear head. Throws `DataError` for a class missing from `synthetic`.
 */
MetricsReport evaluate_synthetic(const LabeledDataset& synthetic, const LabeledDataset& test, const EvalModelSpec& model,
                                 const EvalConfig& cfg, const Encoder* encoder = nullptr);

/** The sampled cells themselves, `spc` per class, in the order used by `init_latents`. */
LabeledDataset baseline_random_real(const LabeledDataset& train, std::size_t spc, std::uint64_t seed);

/** Distillation that updates expression values directly; `mode` must be DC or DM. */
DistillResult baseline_data_level(const LabeledDataset& train, MatchMode mode, DistillConfig cfg, const Encoder& encoder,
                                  const Decoder& decoder, const Generator& generator);

struct GridSpec {
    std::vector<std::size_t> spc{ 1 };
    std::vector<Synthesis> generators{ Synthesis::Scdg };
    std::vector<bool> frozen{ true };
    std::vector<std::size_t> head_layers{ 1 };
    std::vector<std::uint64_t> seeds{ 0 };
};

struct GridRow {
    std::size_t spc = 1;
    Synthesis generator = Synthesis::Scdg;
    bool frozen = true;
    std::size_t head_layers = 1;
    /** "ok" or "skipped". */
    std::string status = "ok";
    std::string reason;
    /** Trials of every seed, seed-major. */
    MetricsReport metrics;
    /** Mean over seeds of the final reference matching loss. */
    double final_loss = 0;
};

/**
 * Cartesian product of the grid axes. Each cell distills once per seed and evaluates with `eval`;
 * `head_layers` sets both the distillation head and the evaluation head. Cells whose SPC exceeds the smallest class are skipped.
 */
std::vector<GridRow> ablation_grid(const LabeledDataset& train, const LabeledDataset& test, const Encoder& encoder, const Decoder& decoder,
                                   const Generator& generator, const GridSpec& grid, const DistillConfig& base, const EvalConfig& eval);

/** A metrics table: named axis columns plus one report per row. */
struct MetricsTable {
    std::vector<std::string> axes;
    struct Row {
        std::vector<std::string> values;
        MetricsReport report;
    };
    std::vector<Row> rows;

    /** Header `axis...,trial,accuracy`. */
    void write_trials(const std::string& path) const;

    /** Header `axis...,mean,std`. */
    void write_summary(const std::string& path) const;
};

MetricsTable grid_table(const std::vector<GridRow>& rows);

/** `spc,generator,frozen,head_layers,status,reason,final_loss`. */
void write_grid_notes(const std::string& path, const std::vector<GridRow>& rows);

/**
 * Merges summary CSVs (header `axis...,mean,std`) into one table over the union of axis columns,
 * missing axes left empty, rows sorted by axis values (numerically where both parse as numbers).
 * Throws `ParseError` naming the file on a malformed header or row.
 */
void merge_summaries(const std::vector<std::string>& paths, const std::string& out_path);

}

#endif
