#include <gtest/gtest.h>

#include "pipeline_fixture.hpp"
#include "scdd/error.hpp"
#include "scdd/eval.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace scdd;
namespace tu = scdd::testing;
namespace fs = std::filesystem;

namespace {

EvalConfig quick_eval() {
    EvalConfig cfg;
    cfg.n_trials = 4;
    cfg.epochs = 200;
    return cfg;
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path scratch(const std::string& name) {
    auto dir = fs::temp_directory_path() / "scdd_test_eval";
    fs::create_directories(dir);
    return dir / name;
}

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream(path, std::ios::binary) << text;
}

std::size_t line_count(const std::string& text) {
    return static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n'));
}

LabeledDataset balanced_toy() {
    ToyConfig toy;
    toy.classes = 4;
    toy.genes = 200;
    toy.cells = 600;
    toy.imbalance = 1;
    toy.markers_per_class = 10;
    toy.program_genes = 10;
    toy.seed = 3;
    return normalize_dataset(filter_dataset(make_toy_dataset(toy)));
}

}

TEST(Evaluate, FullTrainSetBeatsOneCellPerClass) {
    const auto& p = tu::small_pipeline();
    EvalModelSpec model;
    auto cfg = quick_eval();
    const double ceiling = evaluate_synthetic(p.train, p.test, model, cfg, &p.encoder).mean;
    double sampled = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        sampled += evaluate_synthetic(baseline_random_real(p.train, 1, seed), p.test, model, cfg, &p.encoder).mean / 5;
    }
    EXPECT_GT(ceiling, 0.7);
    EXPECT_LT(sampled, ceiling);
}

TEST(Evaluate, EveryArchitectureLearnsFromTheFullTrainSet) {
    const auto& p = tu::small_pipeline();
    EvalConfig cfg;
    cfg.n_trials = 1;
    std::size_t majority = 0;
    for (const auto& part : class_partition(p.test)) {
        majority = std::max(majority, part.size());
    }
    const double majority_rate = static_cast<double>(majority) / static_cast<double>(p.test.size());
    for (auto arch : { Architecture::LinearHead, Architecture::Logistic, Architecture::Mlp, Architecture::Attention }) {
        EvalModelSpec model;
        model.arch = arch;
        auto report = evaluate_synthetic(p.train, p.test, model, cfg, &p.encoder);
        EXPECT_GT(report.mean, majority_rate + 0.1) << to_string(arch);
    }
}

TEST(Evaluate, ShuffledLabelsScoreAtChance) {
    auto all = balanced_toy();
    auto [train, test] = split_dataset(all, 0.7, 1);
    Rng rng(8);
    rng.shuffle(train.labels);
    EvalModelSpec model;
    model.arch = Architecture::Logistic;
    auto report = evaluate_synthetic(train, test, model, quick_eval());
    const double chance = 1.0 / static_cast<double>(all.class_count);
    // Spread of a test accuracy whose predictions carry no label information.
    const double se = std::sqrt(chance * (1 - chance) / static_cast<double>(test.size()));
    EXPECT_NEAR(report.mean, chance, 3 * std::max(se, report.std));
}

TEST(Evaluate, DeterministicAndSummarized) {
    const auto& p = tu::small_pipeline();
    EvalModelSpec model;
    auto cfg = quick_eval();
    cfg.n_trials = 10;
    auto syn = baseline_random_real(p.train, 2, 4);
    auto a = evaluate_synthetic(syn, p.test, model, cfg, &p.encoder);
    auto b = evaluate_synthetic(syn, p.test, model, cfg, &p.encoder);
    ASSERT_EQ(a.trials.size(), 10u);
    EXPECT_EQ(a.trials, b.trials);
    double mean = 0;
    for (double t : a.trials) {
        mean += t / 10;
    }
    double ss = 0;
    for (double t : a.trials) {
        ss += (t - mean) * (t - mean);
    }
    EXPECT_NEAR(a.mean, mean, 1e-12);
    EXPECT_NEAR(a.std, std::sqrt(ss / 9), 1e-12);

    cfg.threads = 3;
    EXPECT_EQ(evaluate_synthetic(syn, p.test, model, cfg, &p.encoder).trials, a.trials);
}

TEST(Evaluate, MissingClassIsAnError) {
    const auto& p = tu::small_pipeline();
    auto syn = baseline_random_real(p.train, 1, 0);
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < syn.size(); ++i) {
        if (syn.labels[i] != 2) {
            keep.push_back(i);
        }
    }
    try {
        evaluate_synthetic(syn.subset(keep), p.test, EvalModelSpec{}, quick_eval(), &p.encoder);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos) << e.what();
    }
}

TEST(Evaluate, InvalidConfig) {
    EvalConfig cfg;
    cfg.n_trials = 0;
    EXPECT_THROW(cfg.validate(), ConfigError);
    EXPECT_THROW(parse_architecture("transformer"), ConfigError);
    EXPECT_EQ(parse_architecture("mlp"), Architecture::Mlp);
}

TEST(Baseline, RandomRealSampling) {
    const auto& p = tu::small_pipeline();
    auto one = baseline_random_real(p.train, 1, 0);
    EXPECT_EQ(one.size(), p.train.class_count);

    auto all = balanced_toy();
    const std::size_t per_class = class_partition(all)[0].size();
    auto whole = baseline_random_real(all, per_class, 0);
    ASSERT_EQ(whole.size(), all.size());
    auto ids = whole.cell_ids;
    auto expect = all.cell_ids;
    std::sort(ids.begin(), ids.end());
    std::sort(expect.begin(), expect.end());
    EXPECT_EQ(ids, expect);
}

TEST(Baseline, DataLevel) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg;
    cfg.N = 2;
    cfg.expert_batch = 64;
    cfg.K = 0;
    auto start = baseline_data_level(p.train, MatchMode::DM, cfg, p.encoder, p.decoder, p.generator);
    EXPECT_TRUE(start.synthetic.matrix == baseline_random_real(p.train, 1, 0).matrix);

    cfg.K = 50;
    auto run = baseline_data_level(p.train, MatchMode::DM, cfg, p.encoder, p.decoder, p.generator);
    EXPECT_LT(run.trace.steps.back().loss_dm, run.trace.steps.front().loss_dm);
    double worst = 0;
    for (const auto& s : run.trace.steps) {
        worst = std::max(worst, s.negative_fraction);
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_THROW(baseline_data_level(p.train, MatchMode::DCDM, cfg, p.encoder, p.decoder, p.generator), ConfigError);
}

TEST(Generator, ConditionalSamplesAreRecognizable) {
    const auto& p = tu::small_pipeline();
    const std::size_t per_class = 20;
    const auto T = p.generator.schedule.T;
    Rng rng(12);
    auto cfg = quick_eval();
    cfg.n_trials = 2;
    const double chance = 1.0 / static_cast<double>(p.train.class_count);
    for (std::size_t c = 0; c < p.train.class_count; ++c) {
        Tensor z = tu::random_tensor(per_class, latent_width, rng, 1.0);
        std::vector<ConditionInfo> cond(per_class, ConditionInfo{ c, {} });
        LabeledDataset generated;
        generated.matrix = ExpressionMatrix::from_dense(generate(p.generator, p.decoder, z, cond, T));
        generated.class_count = p.train.class_count;
        generated.labels.assign(per_class, c);
        generated.conditions = cond;
        for (std::size_t i = 0; i < per_class; ++i) {
            generated.cell_ids.push_back("g" + std::to_string(i));
        }
        auto report = evaluate_synthetic(p.train, generated, EvalModelSpec{}, cfg, &p.encoder);
        EXPECT_GT(report.mean, chance) << "class " << c;
    }
}

TEST(Grid, RowsSkipsAndReproducibleCsv) {
    const auto& p = tu::small_pipeline();
    GridSpec grid;
    grid.spc = { 1, 100000 };
    grid.generators = { Synthesis::Scdg, Synthesis::DecoderOnly };
    grid.seeds = { 0, 1 };
    DistillConfig base;
    base.K = 5;
    base.N = 2;
    base.expert_batch = 64;
    auto eval = quick_eval();
    eval.n_trials = 2;
    eval.epochs = 50;
    auto rows = ablation_grid(p.train, p.test, p.encoder, p.decoder, p.generator, grid, base, eval);
    ASSERT_EQ(rows.size(), 4u);
    std::size_t skipped = 0;
    for (const auto& r : rows) {
        if (r.status == "skipped") {
            ++skipped;
            EXPECT_NE(r.reason.find("spc 100000"), std::string::npos);
        } else {
            EXPECT_EQ(r.metrics.trials.size(), 4u);
            EXPECT_GT(r.final_loss, 0.0);
        }
    }
    EXPECT_EQ(skipped, 2u);

    auto table = grid_table(rows);
    table.write_summary(scratch("grid_a.csv").string());
    table.write_trials(scratch("trials.csv").string());
    write_grid_notes(scratch("notes.csv").string(), rows);
    auto again = grid_table(ablation_grid(p.train, p.test, p.encoder, p.decoder, p.generator, grid, base, eval));
    again.write_summary(scratch("grid_b.csv").string());
    EXPECT_EQ(slurp(scratch("grid_a.csv")), slurp(scratch("grid_b.csv")));
    EXPECT_EQ(slurp(scratch("grid_a.csv")).substr(0, 38), "spc,generator,frozen,head_layers,mean,");
    EXPECT_EQ(line_count(slurp(scratch("trials.csv"))), 1u + 2 * 4);
    EXPECT_EQ(line_count(slurp(scratch("notes.csv"))), 5u);
}

TEST(Report, SingleFileIsSorted) {
    write_file(scratch("one.csv"), "method,spc,mean,std\nscdd,10,0.9,0.01\nscdd,2,0.8,0.02\nrandom,1,0.1,0.03\n");
    merge_summaries({ scratch("one.csv").string() }, scratch("agg.csv").string());
    EXPECT_EQ(slurp(scratch("agg.csv")), "method,spc,mean,std\nrandom,1,0.1,0.03\nscdd,2,0.8,0.02\nscdd,10,0.9,0.01\n");
}

TEST(Report, DisjointAxesAddRows) {
    write_file(scratch("a.csv"), "method,mean,std\nx,0.5,0.1\ny,0.6,0.1\n");
    write_file(scratch("b.csv"), "arch,mean,std\nmlp,0.7,0.2\n");
    merge_summaries({ scratch("a.csv").string(), scratch("b.csv").string() }, scratch("agg.csv").string());
    const auto text = slurp(scratch("agg.csv"));
    EXPECT_EQ(line_count(text), 4u);
    EXPECT_EQ(text.substr(0, text.find('\n')), "method,arch,mean,std");
}

TEST(Report, MalformedHeaderNamesFile) {
    write_file(scratch("bad.csv"), "method,accuracy\nx,0.5\n");
    try {
        merge_summaries({ scratch("bad.csv").string() }, scratch("agg.csv").string());
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.csv"), std::string::npos) << e.what();
    }
}
