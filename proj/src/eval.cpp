#include "scdd/eval.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "scdd/error.hpp"

namespace scdd {

std::string to_string(Architecture arch) {
    switch (arch) {
        case Architecture::LinearHead: return "linear-head";
        case Architecture::Logistic: return "logistic";
        case Architecture::Mlp: return "mlp";
        case Architecture::Attention: return "attention";
    }
    return "?";
}

Architecture parse_architecture(const std::string& text) {
    for (auto a : { Architecture::LinearHead, Architecture::Logistic, Architecture::Mlp, Architecture::Attention }) {
        if (text == to_string(a)) {
            return a;
        }
    }
    throw ConfigError("eval.arch: unknown architecture '" + text + "'");
}

void EvalModelSpec::validate(std::size_t genes) const {
    if (head_layers == 0) {
        throw ConfigError("eval.head_layers: must be at least 1");
    }
    if (hidden == 0) {
        throw ConfigError("eval.hidden: must be positive");
    }
    if (tokens == 0 || token_width == 0) {
        throw ConfigError("eval.tokens: token count and width must be positive");
    }
    if (arch == Architecture::Attention && tokens > genes) {
        throw ConfigError("eval.tokens: " + std::to_string(tokens) + " groups for only " + std::to_string(genes) + " genes");
    }
}

void EvalConfig::validate() const {
    if (n_trials == 0) {
        throw ConfigError("eval.n_trials: must be at least 1");
    }
    if (epochs == 0) {
        throw ConfigError("eval.epochs: must be at least 1");
    }
    if (!(lr >= 0) || !std::isfinite(lr)) {
        throw ConfigError("eval.lr: must be non-negative (0 selects the default)");
    }
    if (threads == 0) {
        throw ConfigError("eval.threads: must be at least 1");
    }
}

double default_eval_lr(Architecture arch) {
    switch (arch) {
        case Architecture::LinearHead: return 0.1;
        case Architecture::Logistic: return 0.03;
        case Architecture::Mlp: return 0.03;
        case Architecture::Attention: return 0.1;
    }
    return 0.1;
}

void MetricsReport::summarize() {
    const double n = static_cast<double>(trials.size());
    mean = trials.empty() ? 0 : std::accumulate(trials.begin(), trials.end(), 0.0) / n;
    double ss = 0;
    for (double a : trials) {
        ss += (a - mean) * (a - mean);
    }
    std = trials.size() > 1 ? std::sqrt(ss / (n - 1)) : 0;
}

namespace {

/** A classifier as a parameter set plus its forward pass. */
struct Model {
    ParamSet params;
    std::function<Var(Graph&, const ParamSet&, Var)> logits;
};

Model make_model(const EvalModelSpec& spec, std::size_t in, std::size_t classes, Rng& rng) {
    Model m;
    switch (spec.arch) {
        case Architecture::LinearHead: {
            TaskHead head = make_head(in, classes, spec.head_layers, rng);
            m.params = head.params;
            m.logits = [head](Graph& g, const ParamSet& p, Var x) {
                TaskHead h = head;
                h.params = p;
                return h.logits(g, x);
            };
            break;
        }
        case Architecture::Logistic:
            init_linear(m.params, "logistic.out", in, classes, rng);
            m.logits = [](Graph& g, const ParamSet& p, Var x) { return linear(g, p, "logistic.out", x); };
            break;
        case Architecture::Mlp:
            init_linear(m.params, "mlp.l1", in, spec.hidden, rng);
            init_linear(m.params, "mlp.l2", spec.hidden, classes, rng);
            m.logits = [](Graph& g, const ParamSet& p, Var x) { return linear(g, p, "mlp.l2", relu(linear(g, p, "mlp.l1", x))); };
            break;
        case Architecture::Attention: {
            const std::size_t groups = spec.tokens;
            const std::size_t width = spec.token_width;
            const std::size_t group_size = (in + groups - 1) / groups;
            init_linear(m.params, "attn.token", group_size, width, rng);
            Tensor position = Tensor::matrix(groups, width);
            Tensor query = Tensor::matrix(width, 1);
            for (auto& v : position.data()) {
                v = rng.normal(0, 0.1);
            }
            const double bound = 1.0 / std::sqrt(static_cast<double>(width));
            for (auto& v : query.data()) {
                v = (2 * rng.uniform() - 1) * bound;
            }
            m.params.add("attn.position", std::move(position));
            m.params.add("attn.query", std::move(query));
            init_linear(m.params, "attn.out", width, classes, rng);
            // Sums the token slots of a row laid out as groups x width.
            Tensor pool = Tensor::matrix(width, groups * width);
            for (std::size_t k = 0; k < groups; ++k) {
                for (std::size_t j = 0; j < width; ++j) {
                    pool(j, k * width + j) = 1;
                }
            }
            m.logits = [=](Graph& g, const ParamSet& p, Var x) {
                const std::size_t n = x.rows();
                Var padded = x;
                if (groups * group_size > in) {
                    std::vector<Var> parts{ x, g.constant(Tensor::matrix(n, groups * group_size - in)) };
                    padded = concat(parts, 1);
                }
                std::vector<std::size_t> slot(n * groups);
                for (std::size_t i = 0; i < slot.size(); ++i) {
                    slot[i] = i % groups;
                }
                Var tokens = linear(g, p, "attn.token", reshape(padded, n * groups, group_size));
                tokens = relu(tokens + embedding_lookup(p.bind(g, "attn.position"), slot));
                Var weights = softmax(reshape(matmul(tokens, p.bind(g, "attn.query")), n, groups));
                Var spread = matmul(reshape(weights, n * groups, 1), g.constant(Tensor::matrix(1, width, 1.0)));
                Var pooled = matmul(reshape(mul(tokens, spread), n, groups * width), g.constant(pool), false, true);
                return linear(g, p, "attn.out", pooled);
            };
            break;
        }
    }
    return m;
}

double train_and_score(const EvalModelSpec& spec, const Tensor& x, std::span<const std::size_t> y, const Tensor& test_x,
                       std::span<const std::size_t> test_y, std::size_t classes, double lr, std::size_t epochs, Rng rng) {
    Model m = make_model(spec, x.cols(), classes, rng);
    Sgd opt(lr);
    for (std::size_t e = 0; e < epochs; ++e) {
        Graph g;
        Var loss = cross_entropy(m.logits(g, m.params, g.constant(x)), y);
        Gradients grads;
        try {
            grads = backward(g, loss);
        } catch (const NumericError& err) {
            throw TrainingFailure("evaluation " + to_string(spec.arch) + " diverged at epoch " + std::to_string(e) + ": " + err.what());
        }
        opt.step(m.params, grads);
    }
    ParamSet frozen = m.params;
    frozen.freeze_all();
    Graph g;
    return accuracy(m.logits(g, frozen, g.constant(test_x)).value(), test_y);
}

}

MetricsReport evaluate_synthetic(const LabeledDataset& synthetic, const LabeledDataset& test, const EvalModelSpec& model,
                                 const EvalConfig& cfg, const Encoder* encoder) {
    cfg.validate();
    model.validate(synthetic.matrix.n_genes());
    if (synthetic.size() == 0) {
        throw DataError("evaluation: synthetic set is empty");
    }
    if (synthetic.matrix.n_genes() != test.matrix.n_genes()) {
        throw ShapeError("evaluation: synthetic set has " + std::to_string(synthetic.matrix.n_genes()) + " genes, test set "
                         + std::to_string(test.matrix.n_genes()));
    }
    std::vector<bool> present(synthetic.class_count, false);
    for (auto c : synthetic.labels) {
        present[c] = true;
    }
    for (auto c : test.labels) {
        if (c >= synthetic.class_count || !present[c]) {
            throw DataError("evaluation: class " + std::to_string(c) + " is absent from the synthetic set");
        }
    }
    Tensor x, test_x;
    if (model.arch == Architecture::LinearHead) {
        if (encoder == nullptr) {
            throw ContractViolation("evaluation with the linear head needs the feature encoder");
        }
        x = encode(*encoder, synthetic.matrix);
        test_x = encode(*encoder, test.matrix);
    } else {
        x = synthetic.matrix.to_dense();
        test_x = test.matrix.to_dense();
    }
    const double lr = cfg.lr > 0 ? cfg.lr : default_eval_lr(model.arch);
    const std::uint64_t master = derive_seed(cfg.seed, "eval." + to_string(model.arch));

    MetricsReport report;
    report.arch = model.arch;
    report.config = cfg;
    report.model = model;
    report.trials.assign(cfg.n_trials, 0.0);
    std::vector<std::exception_ptr> failures(cfg.n_trials);
    std::atomic<std::size_t> next{ 0 };
    auto worker = [&] {
        for (std::size_t i = next++; i < cfg.n_trials; i = next++) {
            try {
                report.trials[i] = train_and_score(model, x, synthetic.labels, test_x, test.labels, synthetic.class_count, lr, cfg.epochs,
                                                   Rng::substream(master, "trial" + std::to_string(i)));
            } catch (...) {
                failures[i] = std::current_exception();
            }
        }
    };
    const std::size_t threads = std::min(cfg.threads, cfg.n_trials);
    if (threads <= 1) {
        worker();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t t = 0; t < threads; ++t) {
            pool.emplace_back(worker);
        }
    }
    for (auto& f : failures) {
        if (f) {
            std::rethrow_exception(f);
        }
    }
    report.summarize();
    return report;
}

LabeledDataset baseline_random_real(const LabeledDataset& train, std::size_t spc, std::uint64_t seed) {
    return train.subset(sample_per_class(train, spc, seed));
}

DistillResult baseline_data_level(const LabeledDataset& train, MatchMode mode, DistillConfig cfg, const Encoder& encoder,
                                  const Decoder& decoder, const Generator& generator) {
    if (mode == MatchMode::DCDM) {
        throw ConfigError("baseline.mode: data-level baseline runs DC or DM, not both");
    }
    cfg.mode = mode;
    cfg.synthesis = Synthesis::DataLevel;
    return distill_run(train, encoder, decoder, generator, cfg);
}

std::vector<GridRow> ablation_grid(const LabeledDataset& train, const LabeledDataset& test, const Encoder& encoder, const Decoder& decoder,
                                   const Generator& generator, const GridSpec& grid, const DistillConfig& base, const EvalConfig& eval) {
    if (grid.seeds.empty()) {
        throw ConfigError("grid.seeds: need at least one seed");
    }
    std::size_t smallest = train.size();
    for (const auto& part : class_partition(train)) {
        smallest = std::min(smallest, part.size());
    }
    std::vector<GridRow> rows;
    for (auto spc : grid.spc) {
        for (auto gen : grid.generators) {
            for (bool frozen : grid.frozen) {
                for (auto layers : grid.head_layers) {
                    GridRow row;
                    row.spc = spc;
                    row.generator = gen;
                    row.frozen = frozen;
                    row.head_layers = layers;
                    EvalModelSpec model;
                    model.head_layers = layers;
                    row.metrics.arch = model.arch;
                    row.metrics.config = eval;
                    row.metrics.model = model;
                    if (spc == 0 || spc > smallest) {
                        row.status = "skipped";
                        row.reason = "spc " + std::to_string(spc) + " exceeds the smallest class (" + std::to_string(smallest) + " cells)";
                        rows.push_back(std::move(row));
                        continue;
                    }
                    double loss = 0;
                    for (auto seed : grid.seeds) {
                        DistillConfig cfg = base;
                        cfg.spc = spc;
                        cfg.synthesis = gen;
                        cfg.freeze_foundation = frozen;
                        cfg.head_layers = layers;
                        cfg.seed = seed;
                        auto result = distill_run(train, encoder, decoder, generator, cfg);
                        loss += result.trace.steps.back().reference_dm;
                        auto report = evaluate_synthetic(result.synthetic, test, model, eval, &encoder);
                        row.metrics.trials.insert(row.metrics.trials.end(), report.trials.begin(), report.trials.end());
                    }
                    row.final_loss = loss / static_cast<double>(grid.seeds.size());
                    row.metrics.summarize();
                    rows.push_back(std::move(row));
                }
            }
        }
    }
    return rows;
}

namespace {

std::ofstream open_out(const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    return out;
}

std::string number(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string join(const std::vector<std::string>& parts) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        out += (i ? "," : "") + parts[i];
    }
    return out;
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

bool as_number(const std::string& s, double& v) {
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size() && !s.empty();
}

bool axis_less(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x, y;
        if (as_number(a[i], x) && as_number(b[i], y)) {
            if (x != y) {
                return x < y;
            }
        } else if (a[i] != b[i]) {
            return a[i] < b[i];
        }
    }
    return false;
}

}

void MetricsTable::write_trials(const std::string& path) const {
    auto out = open_out(path);
    auto header = axes;
    header.insert(header.end(), { "trial", "accuracy" });
    out << join(header) << "\n";
    for (const auto& row : rows) {
        for (std::size_t t = 0; t < row.report.trials.size(); ++t) {
            auto cells = row.values;
            cells.push_back(std::to_string(t));
            cells.push_back(number(row.report.trials[t]));
            out << join(cells) << "\n";
        }
    }
}

void MetricsTable::write_summary(const std::string& path) const {
    auto out = open_out(path);
    auto header = axes;
    header.insert(header.end(), { "mean", "std" });
    out << join(header) << "\n";
    for (const auto& row : rows) {
        auto cells = row.values;
        cells.push_back(number(row.report.mean));
        cells.push_back(number(row.report.std));
        out << join(cells) << "\n";
    }
}

MetricsTable grid_table(const std::vector<GridRow>& rows) {
    MetricsTable table;
    table.axes = { "spc", "generator", "frozen", "head_layers" };
    for (const auto& r : rows) {
        if (r.status != "ok") {
            continue;
        }
        table.rows.push_back({ { std::to_string(r.spc), to_string(r.generator), r.frozen ? "true" : "false", std::to_string(r.head_layers) },
                               r.metrics });
    }
    return table;
}

void write_grid_notes(const std::string& path, const std::vector<GridRow>& rows) {
    auto out = open_out(path);
    out << "spc,generator,frozen,head_layers,status,reason,final_loss\n";
    for (const auto& r : rows) {
        out << join({ std::to_string(r.spc), to_string(r.generator), r.frozen ? "true" : "false", std::to_string(r.head_layers), r.status,
                      r.reason, r.status == "ok" ? number(r.final_loss) : "" })
            << "\n";
    }
}

void merge_summaries(const std::vector<std::string>& paths, const std::string& out_path) {
    if (paths.empty()) {
        throw DataError("report: no summary files to merge");
    }
    struct Parsed {
        std::vector<std::string> axes;
        std::vector<std::vector<std::string>> rows;
    };
    std::vector<Parsed> files;
    std::vector<std::string> axes;
    for (const auto& path : paths) {
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw ParseError(path + ": cannot open summary file");
        }
        std::string line;
        if (!std::getline(in, line)) {
            throw ParseError(path + ": empty file, expected a header ending in mean,std");
        }
        auto header = split(line);
        if (header.size() < 2 || header[header.size() - 2] != "mean" || header.back() != "std") {
            throw ParseError(path + ":1: malformed header '" + line + "', expected axis columns followed by mean,std");
        }
        Parsed p;
        p.axes.assign(header.begin(), header.end() - 2);
        for (const auto& a : p.axes) {
            if (a.empty() || a == "mean" || a == "std") {
                throw ParseError(path + ":1: malformed header '" + line + "'");
            }
            if (std::find(axes.begin(), axes.end(), a) == axes.end()) {
                axes.push_back(a);
            }
        }
        std::size_t n = 1;
        while (std::getline(in, line)) {
            ++n;
            if (line.empty()) {
                continue;
            }
            auto cells = split(line);
            double v;
            if (cells.size() != header.size() || !as_number(cells[cells.size() - 2], v) || !as_number(cells.back(), v)) {
                throw ParseError(path + ":" + std::to_string(n) + ": expected " + std::to_string(header.size()) + " fields ending in two numbers");
            }
            p.rows.push_back(std::move(cells));
        }
        files.push_back(std::move(p));
    }
    std::vector<std::vector<std::string>> merged;
    for (const auto& f : files) {
        for (const auto& cells : f.rows) {
            std::vector<std::string> row(axes.size() + 2);
            for (std::size_t i = 0; i < f.axes.size(); ++i) {
                row[std::find(axes.begin(), axes.end(), f.axes[i]) - axes.begin()] = cells[i];
            }
            row[axes.size()] = cells[cells.size() - 2];
            row[axes.size() + 1] = cells.back();
            merged.push_back(std::move(row));
        }
    }
    std::stable_sort(merged.begin(), merged.end(), axis_less);
    auto out = open_out(out_path);
    auto header = axes;
    header.insert(header.end(), { "mean", "std" });
    out << join(header) << "\n";
    for (const auto& row : merged) {
        out << join(row) << "\n";
    }
}

}
