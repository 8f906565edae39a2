#ifndef SCDD_DATA_HPP
#define SCDD_DATA_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

/**
 * @file data.hpp
 * @brief Sparse expression matrices, labeled datasets, preprocessing and the synthetic count generator.
 */

namespace scdd {

struct MatrixEntry {
    std::size_t cell;
    std::size_t gene;
    double value;
};

/**
 * @brief Sparse non-negative cells x genes matrix.
 *
 * Stored row-compressed by cell with gene indices strictly increasing inside each cell.
 * Only non-zero values are kept, so the stored pattern is the sparsity pattern.
 */
class ExpressionMatrix {
public:
    ExpressionMatrix() = default;

    /** All-zero matrix. */
    ExpressionMatrix(std::size_t n_cells, std::size_t n_genes);

    /**
     * Build from coordinate entries in any order.
     * Throws `DataError` on a negative or non-finite value, an out-of-range index or a duplicated (cell, gene) pair.
     * Zero-valued entries are accepted and dropped.
     */
    static ExpressionMatrix from_entries(std::size_t n_cells, std::size_t n_genes, std::vector<MatrixEntry> entries);

    /** Rows of `dense` are cells. Values must be non-negative. */
    static ExpressionMatrix from_dense(const Tensor& dense);

    std::size_t n_cells() const { return my_n_cells; }

    std::size_t n_genes() const { return my_n_genes; }

    std::size_t nnz() const { return my_values.size(); }

    std::span<const std::size_t> cell_genes(std::size_t cell) const;

    std::span<const double> cell_values(std::size_t cell) const;

    double cell_total(std::size_t cell) const;

    /** Fraction of the n_cells * n_genes entries that are zero. */
    double zero_fraction() const;

    /** Coordinate entries sorted by (cell, gene). */
    std::vector<MatrixEntry> entries() const;

    Tensor to_dense() const;

    /** Dense rows for the given cells, in order. */
    Tensor to_dense(std::span<const std::size_t> cells) const;

    ExpressionMatrix select_cells(std::span<const std::size_t> cells) const;

    /** Keep genes whose flag is set; gene indices are renumbered in order. */
    ExpressionMatrix select_genes(const std::vector<bool>& keep) const;

    /** Same shape and stored positions. */
    bool same_pattern(const ExpressionMatrix& other) const;

    bool operator==(const ExpressionMatrix& other) const = default;

private:
    std::size_t my_n_cells = 0;
    std::size_t my_n_genes = 0;
    std::vector<std::size_t> my_row_ptr{ 0 };
    std::vector<std::size_t> my_genes;
    std::vector<double> my_values;

    friend ExpressionMatrix normalize_cells(const ExpressionMatrix&, double);
};

/**
 * @brief Class id plus optional categorical attributes (stage, region, ...) as small integer codes.
 */
struct ConditionInfo {
    std::size_t class_id = 0;
    std::vector<std::size_t> codes;

    bool operator==(const ConditionInfo&) const = default;
};

/**
 * @brief Expression matrix with per-cell labels and conditions.
 */
struct LabeledDataset {
    ExpressionMatrix matrix;
    std::vector<std::string> cell_ids;
    std::vector<std::size_t> labels;
    std::vector<ConditionInfo> conditions;
    std::size_t class_count = 0;
    /** Names of the extra condition attributes, one per entry of `ConditionInfo::codes`. */
    std::vector<std::string> condition_names;
    /** Vocabulary size of each extra attribute. */
    std::vector<std::size_t> condition_vocab;

    std::size_t size() const { return labels.size(); }

    /** Throws `DataError` if any invariant is broken. */
    void validate() const;

    /** The cells `indices` in order, sharing vocabularies. */
    LabeledDataset subset(std::span<const std::size_t> indices) const;

    bool operator==(const LabeledDataset&) const = default;
};

/** Cell indices per class id (size `class_count`). Covers every cell exactly once. */
std::vector<std::vector<std::size_t>> class_partition(const LabeledDataset& ds);

std::vector<std::vector<std::size_t>> class_partition(std::span<const std::size_t> labels, std::size_t class_count);

/**
 * @brief Parameters of the synthetic count generator.
 *
 * Class sizes fall geometrically from the largest class to `largest / imbalance`.
 * Each class owns `markers_per_class` genes whose expression is raised by `marker_fold`;
 * `programs` shared gene programs switch on per cell with probability `program_probability`, adding class-independent variation.
 * Counts are Poisson given a log-normal library size, then entries are dropped independently until `zero_fraction` is reached.
 */
struct ToyConfig {
    std::size_t classes = 10;
    std::size_t genes = 2000;
    std::size_t cells = 5000;
    std::size_t markers_per_class = 20;
    double imbalance = 70;
    double zero_fraction = 0.9;
    double library_size = 5000;
    double library_sd = 0.4;
    double marker_fold = 4;
    std::size_t programs = 8;
    std::size_t program_genes = 60;
    double program_fold = 4;
    double program_probability = 0.3;
    double gene_weight_sd = 1.0;
    std::uint64_t seed = 0;

    /** Throws `ConfigError` naming the first invalid field. */
    void validate() const;
};

/**
 * Deterministic synthetic count dataset. Throws `DataError` when the Poisson counts are already sparser than `zero_fraction` allows.
 */
LabeledDataset make_toy_dataset(const ToyConfig& cfg);

/** Class sizes used by `make_toy_dataset()`, largest first, summing to `cfg.cells`. */
std::vector<std::size_t> toy_class_sizes(const ToyConfig& cfg);

/**
 * Drop cells with total count below `min_counts`, then genes detected in fewer than `min_cells` of the remaining cells.
 */
LabeledDataset filter_dataset(const LabeledDataset& ds, double min_counts = 10, std::size_t min_cells = 3);

/**
 * Scale each cell to `target_total` then apply `log(1 + v)`. Zeros stay zero.
 * Throws `DataError` naming the first cell whose total is zero.
 */
ExpressionMatrix normalize_cells(const ExpressionMatrix& m, double target_total = 1e4);

LabeledDataset normalize_dataset(const LabeledDataset& ds, double target_total = 1e4);

/**
 * Stratified split: each class sends `max(1, floor(fraction * n_c))` of its cells, drawn at random, to the training side.
 * Cells keep their original relative order on both sides. Throws `DataError` if a class has fewer than 2 cells.
 */
std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double train_fraction, std::uint64_t seed);

/**
 * Matrix Market coordinate file (`%%MatrixMarket matrix coordinate real general`), rows are cells.
 * Throws `ParseError` with the line number on malformed content.
 */
ExpressionMatrix read_matrix_market(const std::string& path);

void write_matrix_market(const std::string& path, const ExpressionMatrix& m);

/**
 * Labels CSV with header `cell_id,class_id[,attr...]`.
 */
void write_labels(const std::string& path, const LabeledDataset& ds);

/**
 * Parse a matrix and its labels CSV into a validated dataset.
 * `class_count` is one more than the largest class id; attribute vocabularies likewise.
 */
LabeledDataset load_dataset(const std::string& matrix_path, const std::string& labels_path);

void save_dataset(const std::string& matrix_path, const std::string& labels_path, const LabeledDataset& ds);

}

#endif
