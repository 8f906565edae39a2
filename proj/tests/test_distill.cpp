#include <gtest/gtest.h>

#include "pipeline_fixture.hpp"
#include "scdd/distill.hpp"
#include "scdd/error.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

using namespace scdd;
namespace tu = scdd::testing;

namespace {

double ce_value(const TaskHead& head, const Tensor& features, std::span<const std::size_t> labels) {
    Graph g;
    return cross_entropy(head.logits(g, g.constant(features)), labels).value().item();
}

Tensor scaled(const Tensor& t, double s) {
    Tensor out = t;
    for (auto& v : out.data()) {
        v *= s;
    }
    return out;
}

DistillConfig quick_config() {
    DistillConfig cfg;
    cfg.K = 20;
    cfg.N = 3;
    cfg.spc = 1;
    cfg.expert_batch = 64;
    return cfg;
}

// Two classes, eight genes, untrained frozen networks.
struct Micro {
    LabeledDataset train;
    Encoder encoder;
    Decoder decoder;
    Generator generator;
};

Micro micro() {
    Micro m;
    Rng rng(77);
    Tensor counts = Tensor::matrix(6, 8);
    for (auto& v : counts.data()) {
        v = static_cast<double>(rng.poisson(3.0)) + 1;
    }
    m.train.matrix = normalize_cells(ExpressionMatrix::from_dense(counts));
    m.train.class_count = 2;
    m.train.labels = { 0, 1, 0, 1, 0, 1 };
    for (std::size_t i = 0; i < 6; ++i) {
        m.train.conditions.push_back({ m.train.labels[i], {} });
        m.train.cell_ids.push_back("m" + std::to_string(i));
    }
    m.encoder = make_encoder(8, rng);
    m.decoder = make_decoder(8, rng);
    m.generator = make_generator(make_schedule(100, 1e-4, 0.1), 2, {}, 1.0, rng);
    m.encoder.params.freeze_all();
    m.decoder.params.freeze_all();
    m.generator.params.freeze_all();
    return m;
}

}

TEST(InitLatents, OneCodePerClass) {
    const auto& p = tu::small_pipeline();
    auto codes = init_latents(p.train, p.encoder, 1, 3);
    EXPECT_EQ(codes.z.shape(), (Shape{ p.train.class_count, latent_width }));
    codes.validate();
    for (std::size_t c = 0; c < p.train.class_count; ++c) {
        EXPECT_EQ(p.train.labels[codes.source[c]], c);
        EXPECT_EQ(codes.conditions[c], p.train.conditions[codes.source[c]]);
    }
    Tensor expect = encode(p.encoder, p.train.matrix.to_dense(codes.source));
    EXPECT_TRUE(codes.z.identical(expect));
}

TEST(InitLatents, SmallestClassFullyUsed) {
    const auto& p = tu::small_pipeline();
    auto parts = class_partition(p.train);
    std::size_t smallest = parts[0].size(), which = 0;
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].size() < smallest) {
            smallest = parts[c].size();
            which = c;
        }
    }
    auto rows = sample_per_class(p.train, smallest, 5);
    std::vector<std::size_t> chosen;
    for (auto r : rows) {
        if (p.train.labels[r] == which) {
            chosen.push_back(r);
        }
    }
    std::sort(chosen.begin(), chosen.end());
    EXPECT_EQ(chosen, parts[which]);
    try {
        sample_per_class(p.train, smallest + 1, 5);
        FAIL();
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("class " + std::to_string(which)), std::string::npos) << e.what();
    }
}

TEST(InitLatents, Deterministic) {
    const auto& p = tu::small_pipeline();
    EXPECT_EQ(init_latents(p.train, p.encoder, 3, 9).source, init_latents(p.train, p.encoder, 3, 9).source);
    EXPECT_NE(init_latents(p.train, p.encoder, 3, 9).source, init_latents(p.train, p.encoder, 3, 10).source);
}

TEST(DmLoss, IdenticalSetsGiveZero) {
    const auto& p = tu::small_pipeline();
    auto parts = class_partition(p.train);
    std::vector<Tensor> originals;
    std::vector<std::size_t> cells, labels;
    for (std::size_t c = 0; c < parts.size(); ++c) {
        std::vector<std::size_t> few(parts[c].begin(), parts[c].begin() + 3);
        originals.push_back(p.train.matrix.to_dense(few));
        for (auto i : few) {
            cells.push_back(i);
            labels.push_back(c);
        }
    }
    FeatureFn f = [&](Graph& g, Var x) { return p.encoder.apply(g, x); };
    Graph g;
    Var loss = dm_loss(f, originals, g.constant(p.train.matrix.to_dense(cells)), labels);
    EXPECT_NEAR(loss.value().item(), 0.0, 1e-12);
}

TEST(DmLoss, UnitDifferenceAndHandComputedSum) {
    FeatureFn identity = [](Graph&, Var x) { return x; };
    {
        Graph g;
        std::vector<std::size_t> labels{ 0 };
        Var loss = dm_loss(identity, { Tensor::matrix(1, 3, { 1, 2, 3 }) }, g.constant(Tensor::matrix(1, 3, { 1, 3, 3 })), labels);
        EXPECT_DOUBLE_EQ(loss.value().item(), 1.0);
    }
    {
        Graph g;
        std::vector<std::size_t> labels{ 0, 1 };
        std::vector<Tensor> originals{ Tensor::matrix(2, 2, { 0, 0, 0, 0 }), Tensor::matrix(1, 2, { 1, 1 }) };
        Var loss = dm_loss(identity, originals, g.constant(Tensor::matrix(2, 2, { 0.3, 0, 1, 1.4 })), labels);
        EXPECT_NEAR(loss.value().item(), 0.7, 1e-12);
    }
}

TEST(DmLoss, MissingClassFails) {
    Graph g;
    std::vector<std::size_t> labels{ 0, 0 };
    EXPECT_THROW(dm_loss(g.constant(Tensor::matrix(2, 2)), labels, Tensor::matrix(2, 2)), DataError);
}

TEST(DmLoss, NeverNegative) {
    Rng rng(31);
    for (int i = 0; i < 50; ++i) {
        Graph g;
        std::vector<std::size_t> labels{ 0, 1, 2, 0, 1, 2 };
        Var loss = dm_loss(g.constant(tu::random_tensor(6, 5, rng)), labels, tu::random_tensor(3, 5, rng), i % 2 == 0);
        ASSERT_GE(loss.value().item(), 0.0);
    }
}

TEST(HeadGrad, ZeroWeightsGiveHalfResidual) {
    Rng rng(1);
    TaskHead head = make_head(3, 2, 1, rng);
    head.params.at("head.l1.weight").fill(0);
    head.params.at("head.l1.bias").fill(0);
    Tensor f = Tensor::matrix(1, 3, { 1, -2, 4 });
    std::vector<std::size_t> y{ 0 };
    auto grads = head_cross_entropy_grad(head, f, y);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_DOUBLE_EQ(grads[0](0, j), -0.5 * f[j]);
        EXPECT_DOUBLE_EQ(grads[0](1, j), 0.5 * f[j]);
    }
    EXPECT_DOUBLE_EQ(grads[1][0], -0.5);
    EXPECT_DOUBLE_EQ(grads[1][1], 0.5);
}

TEST(HeadGrad, ConfidentCorrectPredictionVanishes) {
    Rng rng(2);
    TaskHead head = make_head(2, 2, 1, rng);
    head.params.at("head.l1.weight") = Tensor::matrix(2, 2, { 50, 0, -50, 0 });
    head.params.at("head.l1.bias").fill(0);
    Tensor f = Tensor::matrix(1, 2, { 1, 0.5 });
    std::vector<std::size_t> y{ 0 };
    auto grads = head_cross_entropy_grad(head, f, y);
    EXPECT_LT(tu::norm(grads[0]), 1e-40);
}

TEST(HeadGrad, MatchesFiniteDifferences) {
    for (std::size_t layers : { 1, 2, 3 }) {
        Rng rng(40 + layers);
        TaskHead head = make_head(6, 4, layers, rng);
        Tensor f = tu::random_tensor(9, 6, rng);
        std::vector<std::size_t> y;
        for (int i = 0; i < 9; ++i) {
            y.push_back(rng.uniform_index(4));
        }
        auto grads = head_cross_entropy_grad(head, f, y);
        auto names = head.names();
        for (std::size_t p = 0; p < names.size(); ++p) {
            Tensor numeric = finite_diff_grad(
                [&](const Tensor& w) {
                    TaskHead probe = head;
                    probe.params.at(names[p]) = w;
                    return ce_value(probe, f, y);
                },
                head.params.at(names[p]), 1e-6);
            EXPECT_LT(tu::relative_error(grads[p], numeric), 1e-5) << names[p] << " with " << layers << " layers";
        }
    }
}

TEST(HeadGrad, ShapeMismatchFails) {
    Rng rng(3);
    TaskHead head = make_head(4, 3, 1, rng);
    std::vector<std::size_t> y{ 0 };
    EXPECT_THROW(head_cross_entropy_grad(head, Tensor::matrix(1, 5), y), ShapeError);
}

TEST(DcLoss, Identities) {
    Rng rng(50);
    Tensor a = tu::random_tensor(4, 3, rng);
    Tensor neg = scaled(a, -1);
    EXPECT_NEAR(dc_loss(a, a), 0.0, 1e-12);
    EXPECT_NEAR(dc_loss(a, neg), 2.0, 1e-12);
    Tensor e1 = Tensor::matrix(1, 3, { 1, 0, 0 }), e2 = Tensor::matrix(1, 3, { 0, 2, 0 });
    EXPECT_NEAR(dc_loss(e1, e2), 1.0, 1e-12);
    EXPECT_THROW(dc_loss(a, Tensor::matrix(4, 3)), NumericError);
}

TEST(DcLoss, RangeAndScaleInvariance) {
    Rng rng(51);
    for (int i = 0; i < 1000; ++i) {
        std::vector<Tensor> s{ tu::random_tensor(3, 4, rng), tu::random_tensor(1, 3, rng) };
        std::vector<Tensor> e{ tu::random_tensor(3, 4, rng), tu::random_tensor(1, 3, rng) };
        const double v = dc_loss(s, e);
        ASSERT_GE(v, 0.0);
        ASSERT_LE(v, 2.0);
        if (i < 100) {
            const double a = std::exp(rng.normal(0, 3)), b = std::exp(rng.normal(0, 3));
            std::vector<Tensor> sa{ scaled(s[0], a), scaled(s[1], a) };
            std::vector<Tensor> eb{ scaled(e[0], b), scaled(e[1], b) };
            ASSERT_NEAR(dc_loss(sa, eb), v, 1e-12);
        }
    }
}

TEST(Distill, ZeroStepsReturnsInitialCodes) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.K = 0;
    auto result = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    auto init = init_latents(p.train, p.encoder, cfg.spc, cfg.seed);
    EXPECT_TRUE(result.codes.z.identical(init.z));
    Tensor expect = generate(p.generator, p.decoder, init.z, init.conditions, cfg.t_gen);
    EXPECT_TRUE(result.synthetic.matrix == ExpressionMatrix::from_dense(expect));
    EXPECT_EQ(result.trace.steps.size(), 1u);
}

TEST(Distill, DistributionMatchingTraceTrendsDown) {
    const auto& p = tu::small_pipeline();
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DistillConfig cfg = quick_config();
        cfg.K = 50;
        cfg.N = 1;
        cfg.seed = seed;
        auto steps = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg).trace.steps;
        std::size_t down = 0;
        for (std::size_t k = 1; k < steps.size(); ++k) {
            down += steps[k].loss_dm < steps[k - 1].loss_dm ? 1 : 0;
        }
        EXPECT_LT(steps.back().loss_dm, steps.front().loss_dm) << "seed " << seed;
        EXPECT_GT(2 * down, steps.size() - 1) << "seed " << seed;
    }
}

TEST(Distill, DistributionMatchingReducesLossAndOnlyCodesChange) {
    const auto& p = tu::small_pipeline();
    const auto hashes = std::make_tuple(p.encoder.params.hash(), p.decoder.params.hash(), p.generator.params.hash());
    DistillConfig cfg = quick_config();
    cfg.K = 30;
    cfg.spc = 2;
    auto result = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    ASSERT_EQ(result.trace.steps.size(), 31u);
    EXPECT_LT(result.trace.steps.back().loss_dm, result.trace.steps.front().loss_dm);
    EXPECT_EQ(hashes, std::make_tuple(p.encoder.params.hash(), p.decoder.params.hash(), p.generator.params.hash()));
    result.codes.validate();
    EXPECT_EQ(result.codes.spc, 2u);
    for (double v : result.synthetic.matrix.to_dense().data()) {
        ASSERT_GE(v, 0.0);
    }
}

TEST(Distill, GradientMatchingRuns) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.mode = MatchMode::DC;
    cfg.K = 15;
    auto result = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    for (const auto& s : result.trace.steps) {
        ASSERT_GE(s.loss_dc, 0.0);
        ASSERT_LE(s.loss_dc, 2.0 * cfg.N);
    }
}

TEST(Distill, CheckpointingIsTransparent) {
    const auto& p = tu::small_pipeline();
    for (MatchMode mode : { MatchMode::DM, MatchMode::DCDM }) {
        DistillConfig cfg = quick_config();
        cfg.mode = mode;
        Distiller a(p.train, p.encoder, p.decoder, p.generator, cfg);
        Distiller b(p.train, p.encoder, p.decoder, p.generator, cfg);
        auto codes = a.initial();
        auto with = a.evaluate(codes, 0, true, true);
        auto without = b.evaluate(codes, 0, true, false);
        EXPECT_TRUE(with.grad.identical(without.grad)) << to_string(mode);
        EXPECT_EQ(with.record.objective, without.record.objective);
    }
}

TEST(Distill, MatchingGradientMatchesFiniteDifferences) {
    Micro m = micro();
    for (Synthesis kind : { Synthesis::Scdg, Synthesis::DecoderOnly }) {
        DistillConfig cfg;
        cfg.mode = MatchMode::DM;
        cfg.N = 1;
        cfg.spc = 2;
        cfg.t_gen = 20;
        cfg.synthesis = kind;
        Distiller d(m.train, m.encoder, m.decoder, m.generator, cfg);
        auto codes = d.initial();
        auto ev = d.evaluate(codes, 0, true);
        Tensor numeric = finite_diff_grad(
            [&](const Tensor& z) {
                LatentCodes probe = codes;
                probe.z = z;
                return d.evaluate(probe, 0, false).record.loss_dm;
            },
            codes.z, 1e-6);
        EXPECT_LT(tu::relative_error(ev.grad, numeric), 1e-4) << to_string(kind);
    }
}

TEST(Distill, FrozenFoundationMatchesBetterThanUnfrozen) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.K = 30;
    auto frozen = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    cfg.freeze_foundation = false;
    auto unfrozen = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    EXPECT_LT(frozen.trace.steps.back().reference_dm, unfrozen.trace.steps.back().reference_dm);
    EXPECT_EQ(frozen.trace.steps.back().reference_dm, frozen.trace.steps.back().loss_dm);
}

TEST(Distill, FrozenModeRequiresFrozenNetworks) {
    const auto& p = tu::small_pipeline();
    Encoder open = p.encoder;
    open.params.set_frozen("encoder", false);
    EXPECT_THROW(Distiller(p.train, open, p.decoder, p.generator, quick_config()), ContractViolation);
}

TEST(Distill, DivergenceReportsStep) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.lr_z = 1e300;
    cfg.momentum = 0;
    try {
        distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
        FAIL();
    } catch (const TrainingFailure& e) {
        EXPECT_NE(std::string(e.what()).find("distillation step "), std::string::npos) << e.what();
    }
}

TEST(Distill, DataLevelUpdatesGoNegativeBeforeClamp) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.synthesis = Synthesis::DataLevel;
    cfg.K = 20;
    auto result = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    double worst = 0;
    for (const auto& s : result.trace.steps) {
        worst = std::max(worst, s.negative_fraction);
    }
    EXPECT_GT(worst, 0.0);
    EXPECT_LT(result.trace.steps.back().loss_dm, result.trace.steps.front().loss_dm);
    for (double v : result.synthetic.matrix.to_dense().data()) {
        ASSERT_GE(v, 0.0);
    }

    cfg.K = 0;
    auto untouched = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    auto rows = sample_per_class(p.train, cfg.spc, cfg.seed);
    EXPECT_TRUE(untouched.synthetic.matrix == p.train.matrix.select_cells(rows));
}

TEST(Distill, TraceCsvHasOneRowPerStep) {
    const auto& p = tu::small_pipeline();
    DistillConfig cfg = quick_config();
    cfg.K = 4;
    auto result = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    auto path = std::filesystem::temp_directory_path() / "scdd_test_trace.csv";
    result.trace.write_csv(path.string());
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "step,loss_dm,loss_dc,student_acc,expert_acc");
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        ++rows;
    }
    EXPECT_EQ(rows, 5u);
    std::filesystem::remove(path);

    auto again = distill_run(p.train, p.encoder, p.decoder, p.generator, cfg);
    EXPECT_TRUE(again.codes.z.identical(result.codes.z));
}
