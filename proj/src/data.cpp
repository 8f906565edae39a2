#include "scdd/data.hpp"

#include "scdd/error.hpp"
#include "scdd/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace scdd {

ExpressionMatrix::ExpressionMatrix(std::size_t n_cells, std::size_t n_genes)
    : my_n_cells(n_cells), my_n_genes(n_genes), my_row_ptr(n_cells + 1, 0) {}

ExpressionMatrix ExpressionMatrix::from_entries(std::size_t n_cells, std::size_t n_genes, std::vector<MatrixEntry> entries) {
    for (const auto& e : entries) {
        if (e.cell >= n_cells || e.gene >= n_genes) {
            throw DataError("entry (" + std::to_string(e.cell) + ", " + std::to_string(e.gene) + ") outside a "
                            + std::to_string(n_cells) + " x " + std::to_string(n_genes) + " matrix");
        }
        if (!(e.value >= 0) || !std::isfinite(e.value)) {
            throw DataError("entry (" + std::to_string(e.cell) + ", " + std::to_string(e.gene) + ") has invalid value "
                            + std::to_string(e.value));
        }
    }
    std::sort(entries.begin(), entries.end(), [](const MatrixEntry& a, const MatrixEntry& b) {
        return a.cell != b.cell ? a.cell < b.cell : a.gene < b.gene;
    });
    for (std::size_t i = 1; i < entries.size(); ++i) {
        if (entries[i].cell == entries[i - 1].cell && entries[i].gene == entries[i - 1].gene) {
            throw DataError("duplicate entry (" + std::to_string(entries[i].cell) + ", " + std::to_string(entries[i].gene) + ")");
        }
    }

    ExpressionMatrix m(n_cells, n_genes);
    m.my_genes.reserve(entries.size());
    m.my_values.reserve(entries.size());
    for (const auto& e : entries) {
        if (e.value == 0) {
            continue;
        }
        m.my_genes.push_back(e.gene);
        m.my_values.push_back(e.value);
        m.my_row_ptr[e.cell + 1] += 1;
    }
    std::partial_sum(m.my_row_ptr.begin(), m.my_row_ptr.end(), m.my_row_ptr.begin());
    return m;
}

ExpressionMatrix ExpressionMatrix::from_dense(const Tensor& dense) {
    std::vector<MatrixEntry> entries;
    for (std::size_t r = 0; r < dense.rows(); ++r) {
        for (std::size_t c = 0; c < dense.cols(); ++c) {
            const double v = dense(r, c);
            if (v != 0 || !(v >= 0)) {
                entries.push_back({ r, c, v });
            }
        }
    }
    return from_entries(dense.rows(), dense.cols(), std::move(entries));
}

std::span<const std::size_t> ExpressionMatrix::cell_genes(std::size_t cell) const {
    return std::span<const std::size_t>(my_genes).subspan(my_row_ptr[cell], my_row_ptr[cell + 1] - my_row_ptr[cell]);
}

std::span<const double> ExpressionMatrix::cell_values(std::size_t cell) const {
    return std::span<const double>(my_values).subspan(my_row_ptr[cell], my_row_ptr[cell + 1] - my_row_ptr[cell]);
}

double ExpressionMatrix::cell_total(std::size_t cell) const {
    double s = 0;
    for (double v : cell_values(cell)) {
        s += v;
    }
    return s;
}

double ExpressionMatrix::zero_fraction() const {
    const double total = static_cast<double>(my_n_cells) * static_cast<double>(my_n_genes);
    return total == 0 ? 0.0 : 1.0 - static_cast<double>(nnz()) / total;
}

std::vector<MatrixEntry> ExpressionMatrix::entries() const {
    std::vector<MatrixEntry> out;
    out.reserve(nnz());
    for (std::size_t c = 0; c < my_n_cells; ++c) {
        for (std::size_t k = my_row_ptr[c]; k < my_row_ptr[c + 1]; ++k) {
            out.push_back({ c, my_genes[k], my_values[k] });
        }
    }
    return out;
}

Tensor ExpressionMatrix::to_dense() const {
    std::vector<std::size_t> all(my_n_cells);
    std::iota(all.begin(), all.end(), 0);
    return to_dense(all);
}

Tensor ExpressionMatrix::to_dense(std::span<const std::size_t> cells) const {
    Tensor out = Tensor::matrix(cells.size(), my_n_genes);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] >= my_n_cells) {
            throw DataError("cell index " + std::to_string(cells[i]) + " out of range");
        }
        auto genes = cell_genes(cells[i]);
        auto values = cell_values(cells[i]);
        auto row = out.row(i);
        for (std::size_t k = 0; k < genes.size(); ++k) {
            row[genes[k]] = values[k];
        }
    }
    return out;
}

ExpressionMatrix ExpressionMatrix::select_cells(std::span<const std::size_t> cells) const {
    ExpressionMatrix out(cells.size(), my_n_genes);
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i] >= my_n_cells) {
            throw DataError("cell index " + std::to_string(cells[i]) + " out of range");
        }
        auto genes = cell_genes(cells[i]);
        auto values = cell_values(cells[i]);
        out.my_genes.insert(out.my_genes.end(), genes.begin(), genes.end());
        out.my_values.insert(out.my_values.end(), values.begin(), values.end());
        out.my_row_ptr[i + 1] = out.my_genes.size();
    }
    return out;
}

ExpressionMatrix ExpressionMatrix::select_genes(const std::vector<bool>& keep) const {
    if (keep.size() != my_n_genes) {
        throw DataError("gene mask of length " + std::to_string(keep.size()) + " for " + std::to_string(my_n_genes) + " genes");
    }
    std::vector<std::size_t> renumber(my_n_genes, 0);
    std::size_t kept = 0;
    for (std::size_t g = 0; g < my_n_genes; ++g) {
        renumber[g] = kept;
        kept += keep[g] ? 1 : 0;
    }
    ExpressionMatrix out(my_n_cells, kept);
    for (std::size_t c = 0; c < my_n_cells; ++c) {
        for (std::size_t k = my_row_ptr[c]; k < my_row_ptr[c + 1]; ++k) {
            if (keep[my_genes[k]]) {
                out.my_genes.push_back(renumber[my_genes[k]]);
                out.my_values.push_back(my_values[k]);
            }
        }
        out.my_row_ptr[c + 1] = out.my_genes.size();
    }
    return out;
}

bool ExpressionMatrix::same_pattern(const ExpressionMatrix& other) const {
    return my_n_cells == other.my_n_cells && my_n_genes == other.my_n_genes && my_row_ptr == other.my_row_ptr && my_genes == other.my_genes;
}

void LabeledDataset::validate() const {
    const std::size_t n = matrix.n_cells();
    if (labels.size() != n || conditions.size() != n || cell_ids.size() != n) {
        throw DataError("dataset has " + std::to_string(n) + " cells but " + std::to_string(labels.size()) + " labels, "
                        + std::to_string(conditions.size()) + " conditions and " + std::to_string(cell_ids.size()) + " ids");
    }
    if (condition_names.size() != condition_vocab.size()) {
        throw DataError("condition names and vocabularies differ in length");
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (labels[i] >= class_count) {
            throw DataError("cell " + cell_ids[i] + " has class " + std::to_string(labels[i]) + " but only "
                            + std::to_string(class_count) + " classes exist");
        }
        if (conditions[i].class_id != labels[i]) {
            throw DataError("cell " + cell_ids[i] + ": condition class differs from label");
        }
        if (conditions[i].codes.size() != condition_vocab.size()) {
            throw DataError("cell " + cell_ids[i] + ": wrong number of condition codes");
        }
        for (std::size_t k = 0; k < condition_vocab.size(); ++k) {
            if (conditions[i].codes[k] >= condition_vocab[k]) {
                throw DataError("cell " + cell_ids[i] + ": code " + std::to_string(conditions[i].codes[k]) + " outside the '"
                                + condition_names[k] + "' vocabulary");
            }
        }
    }
}

LabeledDataset LabeledDataset::subset(std::span<const std::size_t> indices) const {
    LabeledDataset out;
    out.matrix = matrix.select_cells(indices);
    out.class_count = class_count;
    out.condition_names = condition_names;
    out.condition_vocab = condition_vocab;
    for (auto i : indices) {
        out.cell_ids.push_back(cell_ids.at(i));
        out.labels.push_back(labels.at(i));
        out.conditions.push_back(conditions.at(i));
    }
    return out;
}

std::vector<std::vector<std::size_t>> class_partition(std::span<const std::size_t> labels, std::size_t class_count) {
    std::vector<std::vector<std::size_t>> parts(class_count);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= class_count) {
            throw DataError("label " + std::to_string(labels[i]) + " outside " + std::to_string(class_count) + " classes");
        }
        parts[labels[i]].push_back(i);
    }
    return parts;
}

std::vector<std::vector<std::size_t>> class_partition(const LabeledDataset& ds) {
    return class_partition(ds.labels, ds.class_count);
}

void ToyConfig::validate() const {
    auto fail = [](const std::string& field, const std::string& why) { throw ConfigError("data." + field + ": " + why); };
    if (classes < 2) {
        fail("classes", "need at least 2 classes");
    }
    if (markers_per_class == 0) {
        fail("markers_per_class", "must be positive");
    }
    if (genes < std::max<std::size_t>(10, classes) * markers_per_class) {
        fail("genes", "need at least max(10, classes) * markers_per_class genes");
    }
    if (!(imbalance >= 1)) {
        fail("imbalance", "must be >= 1");
    }
    if (!(zero_fraction > 0 && zero_fraction < 1)) {
        fail("zero_fraction", "must lie in (0, 1)");
    }
    if (!(library_size > 0)) {
        fail("library_size", "must be positive");
    }
    if (!(library_sd >= 0) || !(gene_weight_sd >= 0)) {
        fail("library_sd", "spreads must be non-negative");
    }
    if (!(marker_fold > 0) || !(program_fold > 0)) {
        fail("marker_fold", "fold changes must be positive");
    }
    if (!(program_probability >= 0 && program_probability <= 1)) {
        fail("program_probability", "must lie in [0, 1]");
    }
    if (program_genes > genes) {
        fail("program_genes", "cannot exceed genes");
    }
    if (cells < 2 * classes) {
        fail("cells", "need at least 2 cells per class");
    }
}

std::vector<std::size_t> toy_class_sizes(const ToyConfig& cfg) {
    const std::size_t C = cfg.classes;
    std::vector<double> rel(C);
    for (std::size_t c = 0; c < C; ++c) {
        rel[c] = std::pow(cfg.imbalance, -static_cast<double>(c) / static_cast<double>(C - 1));
    }
    const double total = std::accumulate(rel.begin(), rel.end(), 0.0);
    std::vector<std::size_t> sizes(C);
    std::vector<std::pair<double, std::size_t>> remainders;
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < C; ++c) {
        const double exact = static_cast<double>(cfg.cells) * rel[c] / total;
        sizes[c] = static_cast<std::size_t>(std::floor(exact));
        assigned += sizes[c];
        remainders.emplace_back(exact - std::floor(exact), c);
    }
    std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (std::size_t k = 0; assigned < cfg.cells; ++k, ++assigned) {
        sizes[remainders[k % C].second] += 1;
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (sizes[c] < 2) {
            throw DataError("class " + std::to_string(c) + " would have fewer than 2 cells; raise data.cells or lower data.imbalance");
        }
    }
    return sizes;
}

LabeledDataset make_toy_dataset(const ToyConfig& cfg) {
    cfg.validate();
    const std::size_t C = cfg.classes;
    const std::size_t d = cfg.genes;
    Rng structure = Rng::substream(cfg.seed, "toy.structure");
    Rng counts_rng = Rng::substream(cfg.seed, "toy.counts");
    Rng dropout_rng = Rng::substream(cfg.seed, "toy.dropout");

    const auto sizes = toy_class_sizes(cfg);
    std::vector<std::size_t> labels;
    for (std::size_t c = 0; c < C; ++c) {
        labels.insert(labels.end(), sizes[c], c);
    }
    structure.shuffle(labels);

    std::vector<double> base(d);
    for (auto& w : base) {
        w = std::exp(cfg.gene_weight_sd * structure.normal());
    }
    const auto marker_order = structure.sample_without_replacement(d, C * cfg.markers_per_class);
    std::vector<std::vector<std::size_t>> programs(cfg.programs);
    for (auto& p : programs) {
        p = structure.sample_without_replacement(d, cfg.program_genes);
    }

    // Poisson counts; only non-zeros are kept.
    struct Count {
        std::size_t cell, gene;
        double value;
        double rate;
    };
    std::vector<Count> counts;
    std::vector<double> weights(d);
    const double sd = cfg.library_sd;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double library = cfg.library_size * std::exp(sd * counts_rng.normal() - 0.5 * sd * sd);
        weights = base;
        const std::size_t c = labels[i];
        for (std::size_t k = 0; k < cfg.markers_per_class; ++k) {
            weights[marker_order[c * cfg.markers_per_class + k]] *= cfg.marker_fold;
        }
        for (const auto& p : programs) {
            if (counts_rng.bernoulli(cfg.program_probability)) {
                for (auto g : p) {
                    weights[g] *= cfg.program_fold;
                }
            }
        }
        const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
        for (std::size_t g = 0; g < d; ++g) {
            const double rate = library * weights[g] / total;
            const auto k = counts_rng.poisson(rate);
            if (k > 0) {
                counts.push_back({ i, g, static_cast<double>(k), rate });
            }
        }
    }

    const double cells_by_genes = static_cast<double>(labels.size()) * static_cast<double>(d);
    const double poisson_zero = 1.0 - static_cast<double>(counts.size()) / cells_by_genes;
    if (poisson_zero > cfg.zero_fraction) {
        throw DataError("infeasible zero fraction: counts are already " + std::to_string(poisson_zero)
                        + " zero before dropout (target " + std::to_string(cfg.zero_fraction) + "); raise data.library_size");
    }
    // A non-zero count with Poisson rate mu is dropped with probability exp(-lambda * mu), so weakly expressed
    // genes vanish first. lambda is set by bisection so the expected zero fraction hits the target.
    const double to_drop = (cfg.zero_fraction - poisson_zero) * cells_by_genes;
    auto expected_drops = [&](double lambda) {
        double sum = 0;
        for (const auto& e : counts) {
            sum += std::exp(-lambda * e.rate);
        }
        return sum;
    };
    double lo = 0, hi = 1;
    while (expected_drops(hi) > to_drop) {
        lo = hi;
        hi *= 2;
    }
    for (int it = 0; it < 40; ++it) {
        const double mid = 0.5 * (lo + hi);
        (expected_drops(mid) > to_drop ? lo : hi) = mid;
    }
    const double lambda = 0.5 * (lo + hi);

    std::vector<MatrixEntry> entries;
    entries.reserve(static_cast<std::size_t>((1 - cfg.zero_fraction) * cells_by_genes * 1.05) + 16);
    for (const auto& e : counts) {
        if (!dropout_rng.bernoulli(std::exp(-lambda * e.rate))) {
            entries.push_back({ e.cell, e.gene, e.value });
        }
    }

    LabeledDataset ds;
    ds.matrix = ExpressionMatrix::from_entries(labels.size(), d, std::move(entries));
    ds.class_count = C;
    ds.labels = labels;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "cell%05zu", i);
        ds.cell_ids.emplace_back(id);
        ds.conditions.push_back(ConditionInfo{ labels[i], {} });
    }
    return ds;
}

LabeledDataset filter_dataset(const LabeledDataset& ds, double min_counts, std::size_t min_cells) {
    std::vector<std::size_t> keep_cells;
    for (std::size_t c = 0; c < ds.matrix.n_cells(); ++c) {
        if (ds.matrix.cell_total(c) >= min_counts) {
            keep_cells.push_back(c);
        }
    }
    LabeledDataset out = ds.subset(keep_cells);

    std::vector<std::size_t> detected(out.matrix.n_genes(), 0);
    for (std::size_t c = 0; c < out.matrix.n_cells(); ++c) {
        for (auto g : out.matrix.cell_genes(c)) {
            detected[g] += 1;
        }
    }
    std::vector<bool> keep_genes(detected.size());
    for (std::size_t g = 0; g < detected.size(); ++g) {
        keep_genes[g] = detected[g] >= min_cells;
    }
    out.matrix = out.matrix.select_genes(keep_genes);
    return out;
}

ExpressionMatrix normalize_cells(const ExpressionMatrix& m, double target_total) {
    ExpressionMatrix out = m;
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        const double total = m.cell_total(c);
        if (!(total > 0)) {
            throw DataError("cell " + std::to_string(c) + " has zero total count and cannot be normalized");
        }
        const double factor = target_total / total;
        for (std::size_t k = out.my_row_ptr[c]; k < out.my_row_ptr[c + 1]; ++k) {
            out.my_values[k] = std::log1p(out.my_values[k] * factor);
        }
    }
    return out;
}

LabeledDataset normalize_dataset(const LabeledDataset& ds, double target_total) {
    LabeledDataset out = ds;
    try {
        out.matrix = normalize_cells(ds.matrix, target_total);
    } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " (see data filtering)");
    }
    return out;
}

std::pair<LabeledDataset, LabeledDataset> split_dataset(const LabeledDataset& ds, double train_fraction, std::uint64_t seed) {
    if (!(train_fraction > 0 && train_fraction < 1)) {
        throw ConfigError("split fraction must lie in (0, 1), got " + std::to_string(train_fraction));
    }
    Rng rng = Rng::substream(seed, "split");
    auto parts = class_partition(ds);
    std::vector<std::size_t> train, test;
    for (std::size_t c = 0; c < parts.size(); ++c) {
        auto& members = parts[c];
        if (members.empty()) {
            continue;
        }
        if (members.size() < 2) {
            throw DataError("class " + std::to_string(c) + " has fewer than 2 cells and cannot be split");
        }
        rng.shuffle(members);
        const auto n_train = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(members.size()))));
        train.insert(train.end(), members.begin(), members.begin() + static_cast<std::ptrdiff_t>(n_train));
        test.insert(test.end(), members.begin() + static_cast<std::ptrdiff_t>(n_train), members.end());
    }
    std::sort(train.begin(), train.end());
    std::sort(test.begin(), test.end());
    return { ds.subset(train), ds.subset(test) };
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) {
            break;
        }
        start = pos + 1;
    }
    return out;
}

std::vector<std::string_view> split_whitespace(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) {
            ++i;
        }
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t') {
            ++j;
        }
        if (j > i) {
            out.push_back(line.substr(i, j - i));
        }
        i = j;
    }
    return out;
}

template<typename T>
bool parse_number(std::string_view s, T& out) {
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

std::string_view chomp(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) {
        s.remove_suffix(1);
    }
    return s;
}

[[noreturn]] void parse_fail(const std::string& path, std::size_t line, const std::string& why) {
    throw ParseError(path + ":" + std::to_string(line) + ": " + why);
}

std::string lowercase(std::string_view s) {
    std::string out(s);
    for (auto& ch : out) {
        ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    }
    return out;
}

}

ExpressionMatrix read_matrix_market(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw ParseError(path + ": cannot open matrix file");
    }
    std::string raw;
    std::size_t line_no = 0;
    if (!std::getline(in, raw)) {
        parse_fail(path, 1, "empty file");
    }
    ++line_no;
    {
        auto header = split_whitespace(chomp(raw));
        if (header.size() < 5 || header[0] != "%%MatrixMarket" || lowercase(header[1]) != "matrix" || lowercase(header[2]) != "coordinate"
            || (lowercase(header[3]) != "real" && lowercase(header[3]) != "integer") || lowercase(header[4]) != "general") {
            parse_fail(path, 1, "expected '%%MatrixMarket matrix coordinate real general'");
        }
    }

    std::size_t n_rows = 0, n_cols = 0, n_entries = 0;
    bool have_size = false;
    std::vector<MatrixEntry> entries;
    std::vector<std::size_t> entry_lines;
    while (std::getline(in, raw)) {
        ++line_no;
        auto line = chomp(raw);
        if (line.empty() || line[0] == '%') {
            continue;
        }
        auto fields = split_whitespace(line);
        if (!have_size) {
            if (fields.size() != 3 || !parse_number(fields[0], n_rows) || !parse_number(fields[1], n_cols) || !parse_number(fields[2], n_entries)) {
                parse_fail(path, line_no, "malformed size line");
            }
            have_size = true;
            entries.reserve(n_entries);
            continue;
        }
        std::size_t r = 0, c = 0;
        double v = 0;
        if (fields.size() != 3 || !parse_number(fields[0], r) || !parse_number(fields[1], c) || !parse_number(fields[2], v)) {
            parse_fail(path, line_no, "malformed entry");
        }
        if (r < 1 || r > n_rows || c < 1 || c > n_cols) {
            parse_fail(path, line_no, "index (" + std::to_string(r) + ", " + std::to_string(c) + ") out of range");
        }
        if (!(v >= 0) || !std::isfinite(v)) {
            parse_fail(path, line_no, "negative or non-finite value");
        }
        entries.push_back({ r - 1, c - 1, v });
        entry_lines.push_back(line_no);
    }
    if (!have_size) {
        parse_fail(path, line_no, "missing size line");
    }
    if (entries.size() != n_entries) {
        parse_fail(path, line_no, "expected " + std::to_string(n_entries) + " entries, found " + std::to_string(entries.size()));
    }
    try {
        return ExpressionMatrix::from_entries(n_rows, n_cols, std::move(entries));
    } catch (const DataError& e) {
        throw ParseError(path + ": " + e.what());
    }
}

void write_matrix_market(const std::string& path, const ExpressionMatrix& m) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << m.n_cells() << ' ' << m.n_genes() << ' ' << m.nnz() << '\n';
    char buf[64];
    for (std::size_t c = 0; c < m.n_cells(); ++c) {
        auto genes = m.cell_genes(c);
        auto values = m.cell_values(c);
        for (std::size_t k = 0; k < genes.size(); ++k) {
            std::snprintf(buf, sizeof(buf), "%zu %zu %.17g\n", c + 1, genes[k] + 1, values[k]);
            out << buf;
        }
    }
    if (!out) {
        throw std::runtime_error("failed writing '" + path + "'");
    }
}

void write_labels(const std::string& path, const LabeledDataset& ds) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "cell_id,class_id";
    for (const auto& name : ds.condition_names) {
        out << ',' << name;
    }
    out << '\n';
    for (std::size_t i = 0; i < ds.size(); ++i) {
        out << ds.cell_ids[i] << ',' << ds.labels[i];
        for (auto code : ds.conditions[i].codes) {
            out << ',' << code;
        }
        out << '\n';
    }
}

LabeledDataset load_dataset(const std::string& matrix_path, const std::string& labels_path) {
    LabeledDataset ds;
    ds.matrix = read_matrix_market(matrix_path);

    std::ifstream in(labels_path);
    if (!in) {
        throw ParseError(labels_path + ": cannot open labels file");
    }
    std::string raw;
    std::size_t line_no = 0;
    if (!std::getline(in, raw)) {
        parse_fail(labels_path, 1, "empty file");
    }
    ++line_no;
    auto header = split_fields(chomp(raw), ',');
    if (header.size() < 2 || header[0] != "cell_id" || header[1] != "class_id") {
        parse_fail(labels_path, 1, "header must start with 'cell_id,class_id'");
    }
    for (std::size_t k = 2; k < header.size(); ++k) {
        ds.condition_names.emplace_back(header[k]);
    }
    ds.condition_vocab.assign(ds.condition_names.size(), 0);

    while (std::getline(in, raw)) {
        ++line_no;
        auto line = chomp(raw);
        if (line.empty()) {
            continue;
        }
        auto fields = split_fields(line, ',');
        if (fields.size() != header.size()) {
            parse_fail(labels_path, line_no, "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        std::size_t cls = 0;
        if (!parse_number(fields[1], cls)) {
            parse_fail(labels_path, line_no, "class_id is not a non-negative integer");
        }
        ConditionInfo cond{ cls, {} };
        for (std::size_t k = 2; k < fields.size(); ++k) {
            std::size_t code = 0;
            if (!parse_number(fields[k], code)) {
                parse_fail(labels_path, line_no, "condition '" + ds.condition_names[k - 2] + "' is not a non-negative integer");
            }
            cond.codes.push_back(code);
            ds.condition_vocab[k - 2] = std::max(ds.condition_vocab[k - 2], code + 1);
        }
        ds.cell_ids.emplace_back(fields[0]);
        ds.labels.push_back(cls);
        ds.conditions.push_back(std::move(cond));
        ds.class_count = std::max(ds.class_count, cls + 1);
    }

    if (ds.labels.size() != ds.matrix.n_cells()) {
        parse_fail(labels_path, line_no, "labels file has " + std::to_string(ds.labels.size()) + " rows but the matrix has "
                                              + std::to_string(ds.matrix.n_cells()) + " cells");
    }
    ds.validate();
    return ds;
}

void save_dataset(const std::string& matrix_path, const std::string& labels_path, const LabeledDataset& ds) {
    write_matrix_market(matrix_path, ds.matrix);
    write_labels(labels_path, ds);
}

}
