#include "scdd/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>

#include "scdd/checkpoint.hpp"
#include "scdd/error.hpp"

namespace scdd {

namespace fs = std::filesystem;

ArtifactPaths::ArtifactPaths(const fs::path& out) : root(out) {
    const fs::path data = out / "data";
    const fs::path models = out / "models";
    const fs::path distill = out / "distill";
    counts_matrix = data / "counts.mtx";
    counts_labels = data / "counts_labels.csv";
    train_matrix = data / "train.mtx";
    train_labels = data / "train_labels.csv";
    test_matrix = data / "test.mtx";
    test_labels = data / "test_labels.csv";
    foundation = models / "foundation.ckpt";
    foundation_loss = models / "foundation_loss.csv";
    generator = models / "scdg.ckpt";
    generator_loss = models / "scdg_loss.csv";
    synthetic_matrix = distill / "synthetic.mtx";
    synthetic_labels = distill / "synthetic_labels.csv";
    codes = distill / "codes.ckpt";
    trace = distill / "trace.csv";
    eval_dir = out / "eval";
    aggregate = out / "report" / "aggregate.csv";
}

const std::vector<std::string>& stage_names() {
    static const std::vector<std::string> names{ "gen-data", "train-ae", "train-scdg", "distill", "eval", "report" };
    return names;
}

namespace {

void require(std::initializer_list<fs::path> paths) {
    for (const auto& p : paths) {
        if (!fs::exists(p)) {
            throw MissingArtifact(p);
        }
    }
}

void prepare(const fs::path& file) {
    fs::create_directories(file.parent_path());
}

void write_loss_csv(const fs::path& path, const std::vector<double>& losses) {
    prepare(path);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << "epoch,loss\n";
    char buf[64];
    for (std::size_t e = 0; e < losses.size(); ++e) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", e, losses[e]);
        out << buf;
    }
}

LabeledDataset load(const fs::path& matrix, const fs::path& labels) {
    require({ matrix, labels });
    return load_dataset(matrix.string(), labels.string());
}

void save(const fs::path& matrix, const fs::path& labels, const LabeledDataset& ds) {
    prepare(matrix);
    save_dataset(matrix.string(), labels.string(), ds);
}

struct Networks {
    Encoder encoder;
    Decoder decoder;
    Generator generator;
};

Networks load_networks(const ArtifactPaths& paths) {
    require({ paths.foundation, paths.generator });
    Networks n;
    std::tie(n.encoder, n.decoder) = load_foundation(paths.foundation.string());
    n.generator = load_generator(paths.generator.string());
    return n;
}

void gen_data(const RunConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    LabeledDataset counts;
    if (cfg.data.source == "toy") {
        counts = make_toy_dataset(cfg.data.toy);
    } else {
        counts = load(cfg.data.matrix, cfg.data.labels);
    }
    save(paths.counts_matrix, paths.counts_labels, counts);
    auto processed = normalize_dataset(filter_dataset(counts, cfg.data.min_counts, cfg.data.min_cells));
    auto [train, test] = split_dataset(processed, cfg.data.train_fraction, derive_seed(cfg.seed, "split"));
    save(paths.train_matrix, paths.train_labels, train);
    save(paths.test_matrix, paths.test_labels, test);
    log << "gen-data: " << counts.size() << " cells x " << counts.matrix.n_genes() << " genes, zero fraction "
        << counts.matrix.zero_fraction() << "; train " << train.size() << ", test " << test.size() << " cells over "
        << train.matrix.n_genes() << " genes\n";
}

void train_ae(const RunConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    auto train = load(paths.train_matrix, paths.train_labels);
    AETrainReport report;
    auto [encoder, decoder] = train_autoencoder(train, cfg.autoencoder, &report);
    prepare(paths.foundation);
    save_foundation(paths.foundation.string(), encoder, decoder);
    write_loss_csv(paths.foundation_loss, report.epoch_loss);
    log << "train-ae: reconstruction mse " << report.initial_mse << " -> " << report.final_mse << "\n";
}

void train_gen(const RunConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    auto train = load(paths.train_matrix, paths.train_labels);
    require({ paths.foundation });
    auto [encoder, decoder] = load_foundation(paths.foundation.string());
    SCDGTrainReport report;
    Generator generator = train_scdg(encoder, train, cfg.scdg, &report);
    prepare(paths.generator);
    save_generator(paths.generator.string(), generator);
    write_loss_csv(paths.generator_loss, report.epoch_loss);
    log << "train-scdg: probe loss " << report.initial_probe_loss << " -> " << report.final_probe_loss << "\n";
}

void distill(const RunConfig& cfg, const ArtifactPaths& paths, std::ostream& log) {
    auto train = load(paths.train_matrix, paths.train_labels);
    auto nets = load_networks(paths);
    auto result = distill_run(train, nets.encoder, nets.decoder, nets.generator, cfg.distill);
    save(paths.synthetic_matrix, paths.synthetic_labels, result.synthetic);
    Tensor source = Tensor::matrix(result.codes.source.size(), 1);
    for (std::size_t i = 0; i < result.codes.source.size(); ++i) {
        source[i] = static_cast<double>(result.codes.source[i]);
    }
    save_checkpoint(paths.codes.string(), std::vector<NamedTensor>{ { "codes", result.codes.z }, { "source", source } });
    result.trace.write_csv(paths.trace.string());
    const auto& first = result.trace.steps.front();
    const auto& last = result.trace.steps.back();
    log << "distill: " << result.synthetic.size() << " synthetic profiles, objective " << first.objective << " -> " << last.objective
        << "\n";
}

void evaluate(const RunConfig& cfg, const ArtifactPaths& paths, std::size_t threads, std::ostream& log) {
    auto train = load(paths.train_matrix, paths.train_labels);
    auto test = load(paths.test_matrix, paths.test_labels);
    auto nets = load_networks(paths);
    auto synthetic = load(paths.synthetic_matrix, paths.synthetic_labels);
    synthetic.class_count = train.class_count;
    EvalConfig ec = cfg.eval.config;
    if (threads > 0) {
        ec.threads = threads;
    }

    struct Method {
        std::string name;
        std::string spc;
        LabeledDataset data;
    };
    const std::string spc = std::to_string(cfg.distill.spc);
    std::vector<Method> methods{ { "scdd", spc, synthetic } };
    for (const auto& b : cfg.eval.baselines) {
        if (b == "full") {
            methods.push_back({ b, "all", train });
        } else if (b == "random-real") {
            methods.push_back({ b, spc, baseline_random_real(train, cfg.distill.spc, cfg.distill.seed) });
        } else if (b == "decoder") {
            DistillConfig dc = cfg.distill;
            dc.synthesis = Synthesis::DecoderOnly;
            methods.push_back({ b, spc, distill_run(train, nets.encoder, nets.decoder, nets.generator, dc).synthetic });
        } else {
            const MatchMode mode = b == "data-dm" ? MatchMode::DM : MatchMode::DC;
            methods.push_back({ b, spc, baseline_data_level(train, mode, cfg.distill, nets.encoder, nets.decoder, nets.generator).synthetic });
        }
    }

    MetricsTable table;
    table.axes = { "method", "arch", "spc" };
    for (const auto& m : methods) {
        for (auto arch : cfg.eval.archs) {
            auto report = evaluate_synthetic(m.data, test, cfg.eval.model(arch, cfg.distill.head_layers), ec, &nets.encoder);
            log << "eval: " << m.name << " / " << to_string(arch) << " / spc " << m.spc << ": " << report.mean << " +- " << report.std << "\n";
            table.rows.push_back({ { m.name, to_string(arch), m.spc }, std::move(report) });
        }
    }
    fs::create_directories(paths.eval_dir);
    table.write_trials((paths.eval_dir / "eval_trials.csv").string());
    table.write_summary((paths.eval_dir / "eval_summary.csv").string());

    if (cfg.grid) {
        auto rows = ablation_grid(train, test, nets.encoder, nets.decoder, nets.generator, *cfg.grid, cfg.distill, ec);
        auto grid = grid_table(rows);
        grid.write_trials((paths.eval_dir / "grid_trials.csv").string());
        grid.write_summary((paths.eval_dir / "grid_summary.csv").string());
        write_grid_notes((paths.eval_dir / "grid_notes.csv").string(), rows);
        log << "eval: grid of " << rows.size() << " cells written\n";
    }
}

void report(const ArtifactPaths& paths, std::ostream& log) {
    std::vector<std::string> files;
    if (fs::is_directory(paths.eval_dir)) {
        for (const auto& entry : fs::directory_iterator(paths.eval_dir)) {
            const std::string name = entry.path().filename().string();
            if (entry.is_regular_file() && name.size() > 12 && name.ends_with("_summary.csv")) {
                files.push_back(entry.path().string());
            }
        }
    }
    if (files.empty()) {
        throw MissingArtifact(paths.eval_dir / "eval_summary.csv");
    }
    std::sort(files.begin(), files.end());
    prepare(paths.aggregate);
    merge_summaries(files, paths.aggregate.string());
    log << "report: merged " << files.size() << " summaries into " << paths.aggregate.string() << "\n";
}

}

void run_stage(const std::string& stage, const RunConfig& cfg, std::size_t threads, std::ostream& log) {
    const ArtifactPaths paths(cfg.out);
    if (stage == "gen-data") {
        gen_data(cfg, paths, log);
    } else if (stage == "train-ae") {
        train_ae(cfg, paths, log);
    } else if (stage == "train-scdg") {
        train_gen(cfg, paths, log);
    } else if (stage == "distill") {
        distill(cfg, paths, log);
    } else if (stage == "eval") {
        evaluate(cfg, paths, threads, log);
    } else if (stage == "report") {
        report(paths, log);
    } else {
        throw ConfigError("stage: unknown subcommand '" + stage + "'");
    }
}

}
