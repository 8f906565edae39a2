#include <gtest/gtest.h>

#include "scdd/error.hpp"
#include "scdd/scdg.hpp"
#include "test_util.hpp"

#include <cmath>
#include <filesystem>
#include <numeric>

using namespace scdd;
namespace tu = scdd::testing;

namespace {

struct Fixture {
    LabeledDataset train;
    Encoder encoder;
    Decoder decoder;
    Generator generator;
    SCDGTrainReport report;
};

const Fixture& fixture() {
    static const Fixture f = [] {
        ToyConfig toy;
        toy.classes = 4;
        toy.genes = 400;
        toy.cells = 800;
        toy.markers_per_class = 10;
        toy.imbalance = 4;
        toy.program_genes = 20;
        Fixture out;
        out.train = normalize_dataset(filter_dataset(make_toy_dataset(toy)));
        AEConfig ae;
        ae.epochs = 20;
        ae.batch_size = 64;
        auto [e, d] = train_autoencoder(out.train, ae);
        out.encoder = std::move(e);
        out.decoder = std::move(d);
        SCDGConfig cfg;
        cfg.epochs = 60;
        out.generator = train_scdg(out.encoder, out.train, cfg, &out.report);
        return out;
    }();
    return f;
}

std::vector<ConditionInfo> class_conditions(std::span<const std::size_t> classes) {
    std::vector<ConditionInfo> out;
    for (auto c : classes) {
        out.push_back({ c, {} });
    }
    return out;
}

}

TEST(Schedule, DefaultConfiguration) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    EXPECT_EQ(s.beta_at(1), 1e-4);
    EXPECT_NEAR(s.beta_at(1000), 0.1, 1e-15);
    EXPECT_LT(s.alpha_bar_at(1000), 1e-20);
    double product = 1;
    for (std::size_t t = 1; t <= 1000; ++t) {
        product *= 1 - (1e-4 + (t - 1) * (0.1 - 1e-4) / 999.0);
    }
    EXPECT_NEAR(s.alpha_bar_at(1000) / product, 1.0, 1e-9);
    for (std::size_t t = 2; t <= 1000; ++t) {
        ASSERT_GT(s.beta_at(t), s.beta_at(t - 1));
        ASSERT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
        ASSERT_EQ(s.alpha_at(t), 1 - s.beta_at(t));
    }
}

TEST(Schedule, OddMidpointIsMeanBeta) {
    auto s = make_schedule(5, 0.01, 0.05);
    EXPECT_NEAR(s.beta_at(3), 0.03, 1e-15);
}

TEST(Schedule, InvalidParameters) {
    EXPECT_THROW(make_schedule(0, 1e-4, 0.1), ConfigError);
    EXPECT_THROW(make_schedule(10, 0.2, 0.1), ConfigError);
    EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
    EXPECT_THROW(make_schedule(10, 0, 0.1), ConfigError);
    EXPECT_NO_THROW(make_schedule(1, 1e-4, 0.1));
}

TEST(ForwardDiffuse, FirstStepIsSmallPerturbation) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Rng rng(3);
    Tensor z0 = tu::random_tensor(50, 8, rng);
    auto d = forward_diffuse(z0, 1, s, rng);
    for (std::size_t i = 0; i < z0.size(); ++i) {
        ASSERT_EQ(d.z_t[i], std::sqrt(s.alpha_bar_at(1)) * z0[i] + std::sqrt(1 - s.alpha_bar_at(1)) * d.eps[i]);
    }
    double dev = 0, noise = 0;
    for (std::size_t i = 0; i < z0.size(); ++i) {
        dev += (d.z_t[i] - z0[i]) * (d.z_t[i] - z0[i]);
        noise += d.eps[i] * d.eps[i];
    }
    // Perturbation scale sqrt(beta_1) = 0.01, plus the tiny shrinkage of z0.
    EXPECT_NEAR(std::sqrt(dev / noise), 0.01, 0.002);
}

TEST(ForwardDiffuse, LastStepIsStandardNormal) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Rng rng(4);
    Tensor z0 = Tensor::matrix(10000, 1, 2.0);
    auto d = forward_diffuse(z0, 1000, s, rng);
    const double m = mean(d.z_t);
    const double v = variance(d.z_t);
    EXPECT_LT(std::abs(m), 3 * std::sqrt(1.0 / 10000));
    EXPECT_LT(std::abs(v - 1), 3 * std::sqrt(2.0 / 10000));
}

TEST(ForwardDiffuse, DeterministicAndRangeChecked) {
    auto s = make_schedule(100, 1e-4, 0.1);
    Rng a(7), b(7);
    Tensor z0 = Tensor::matrix(3, 4, 1.5);
    auto x = forward_diffuse(z0, 40, s, a);
    auto y = forward_diffuse(z0, 40, s, b);
    EXPECT_TRUE(x.z_t.identical(y.z_t));
    EXPECT_TRUE(x.eps.identical(y.eps));
    EXPECT_THROW(forward_diffuse(z0, 0, s, a), ContractViolation);
    EXPECT_THROW(forward_diffuse(z0, 101, s, a), ContractViolation);
}

TEST(Parameterization, ZeroNoise) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Tensor z = Tensor::matrix(2, 2, { 1, -2, 3, 0.5 });
    Tensor out = eps_to_z0(z, Tensor::matrix(2, 2), 300, s);
    for (std::size_t i = 0; i < z.size(); ++i) {
        EXPECT_NEAR(out[i], z[i] / std::sqrt(s.alpha_bar_at(300)), 1e-12 * std::abs(out[i]));
    }
}

TEST(Parameterization, RoundTrip) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Rng rng(8);
    Tensor z0 = tu::random_tensor(20, 16, rng);
    for (std::size_t t : { 1, 50, 200, 400 }) {
        auto d = forward_diffuse(z0, t, s, rng);
        Tensor back = eps_to_z0(d.z_t, d.eps, t, s);
        for (std::size_t i = 0; i < z0.size(); ++i) {
            ASSERT_NEAR(back[i], z0[i], 1e-12 * std::max(1.0, std::abs(z0[i])) / std::sqrt(s.alpha_bar_at(t))) << "t=" << t;
        }
    }
}

TEST(Parameterization, MatchesNumericalSolve) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Rng rng(9);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t t = 1 + rng.uniform_index(300);
        const double zt = rng.normal(0, 2), eps = rng.normal();
        const double a = std::sqrt(s.alpha_bar_at(t)), b = std::sqrt(1 - s.alpha_bar_at(t));
        // Bisection on f(z0) = a z0 + b eps - zt, which is increasing in z0.
        double lo = -1e3, hi = 1e3;
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            (a * mid + b * eps - zt > 0 ? hi : lo) = mid;
        }
        const double solved = 0.5 * (lo + hi);
        const double got = eps_to_z0(Tensor::scalar(zt), Tensor::scalar(eps), t, s).item();
        ASSERT_NEAR(got, solved, 1e-12 * std::max(1.0, std::abs(solved)));
    }
}

TEST(Parameterization, EpsNetworkAndDirectNetworkGiveIdenticalLoss) {
    auto s = make_schedule(1000, 1e-4, 0.1);
    Rng rng(10);
    ParamSet p;
    init_linear(p, "eps.l1", 8, 16, rng);
    init_linear(p, "eps.l2", 16, 8, rng);
    Tensor z0 = tu::random_tensor(12, 8, rng);
    std::vector<std::size_t> t;
    for (int i = 0; i < 12; ++i) {
        t.push_back(1 + rng.uniform_index(1000));
    }
    auto d = forward_diffuse(z0, t, s, rng);
    auto eps_net = [&](Graph& g, Var x) { return linear(g, p, "eps.l2", relu(linear(g, p, "eps.l1", x))); };

    // Route 1: run the epsilon network, convert its output to a clean-latent prediction outside the graph.
    Graph g1;
    Tensor eps_hat = eps_net(g1, g1.constant(d.z_t)).value();
    const double loss_eps = scdg_loss(eps_to_z0(d.z_t, eps_hat, t, s), z0);

    // Route 2: a direct clean-latent network defined as the composition.
    Graph g2;
    Var zt = g2.constant(d.z_t);
    Var direct = eps_to_z0(zt, eps_net(g2, zt), t, s);
    const double loss_direct = mse(direct, g2.constant(z0)).value().item();
    EXPECT_EQ(loss_eps, loss_direct);
}

TEST(Scdg, TrainingBeatsUntrainedAndConstantPredictor) {
    const auto& f = fixture();
    EXPECT_LT(f.report.final_probe_loss, f.report.initial_probe_loss);
    EXPECT_LT(f.report.epoch_loss.back(), f.report.latent_variance);
    EXPECT_TRUE(f.generator.frozen());
}

TEST(Scdg, SingleDenoiserApplicationPerLoss) {
    const auto& f = fixture();
    Generator trainable = f.generator;
    trainable.params = ParamSet();
    for (const auto& [name, v] : f.generator.params.values()) {
        trainable.params.add(name, v);
    }
    Rng rng(11);
    Tensor z0 = encode(f.encoder, f.train.matrix.to_dense(std::vector<std::size_t>{ 0, 1, 2, 3 }));
    std::vector<std::size_t> t{ 1, 250, 600, 1000 };
    auto d = forward_diffuse(z0, t, trainable.schedule, rng);
    std::vector<ConditionInfo> cond(f.train.conditions.begin(), f.train.conditions.begin() + 4);
    Graph g;
    Var loss = mse(trainable.denoise(g, g.constant(d.z_t), t, cond), g.constant(z0));
    BackwardReport report;
    auto grads = backward(g, loss, &report);
    EXPECT_EQ(report.scope_applications["denoiser"], 1u);
    EXPECT_GT(tu::norm(grads.at("denoiser.l1.weight")), 0.0);
}

TEST(Scdg, SingleNoiseLevelStillTrains) {
    const auto& f = fixture();
    SCDGConfig cfg;
    cfg.T = 1;
    cfg.t_gen = 1;
    cfg.epochs = 5;
    SCDGTrainReport report;
    train_scdg(f.encoder, f.train, cfg, &report);
    EXPECT_LT(report.final_probe_loss, report.initial_probe_loss);
}

TEST(Scdg, TrainingIsDeterministic) {
    const auto& f = fixture();
    SCDGConfig cfg;
    cfg.epochs = 2;
    EXPECT_EQ(train_scdg(f.encoder, f.train, cfg).params.hash(), train_scdg(f.encoder, f.train, cfg).params.hash());
}

TEST(Scdg, RequiresFrozenEncoder) {
    const auto& f = fixture();
    Encoder open = f.encoder;
    open.params.set_frozen("encoder", false);
    EXPECT_THROW(train_scdg(open, f.train, SCDGConfig{}), ContractViolation);
}

TEST(Generate, EarlyStepStaysCloseToReconstruction) {
    const auto& f = fixture();
    std::vector<std::size_t> cells(20);
    std::iota(cells.begin(), cells.end(), 0);
    Tensor x = f.train.matrix.to_dense(cells);
    Tensor z = encode(f.encoder, x);
    std::vector<ConditionInfo> cond;
    for (auto i : cells) {
        cond.push_back(f.train.conditions[i]);
    }
    Tensor gen = generate(f.generator, f.decoder, z, cond, 1);
    Tensor rec = decode(f.decoder, z);
    double gen_err = 0, rec_err = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        gen_err += (gen[i] - x[i]) * (gen[i] - x[i]);
        rec_err += (rec[i] - x[i]) * (rec[i] - x[i]);
    }
    EXPECT_LE(gen_err, 2 * rec_err);
}

TEST(Generate, OutputsNonNegative) {
    const auto& f = fixture();
    Rng rng(12);
    Tensor z = tu::random_tensor(200, latent_width, rng, 2.0);
    std::vector<std::size_t> classes;
    for (std::size_t i = 0; i < 200; ++i) {
        classes.push_back(i % f.train.class_count);
    }
    for (std::size_t t : { std::size_t{ 1 }, std::size_t{ 50 }, std::size_t{ 1000 } }) {
        Tensor out = generate(f.generator, f.decoder, z, class_conditions(classes), t);
        for (double v : out.data()) {
            ASSERT_GE(v, 0.0);
        }
    }
}

TEST(Generate, ConditionChangesOutput) {
    const auto& f = fixture();
    Tensor z0 = encode(f.encoder, f.train.matrix.to_dense(std::vector<std::size_t>{ 0 }));
    Tensor z = Tensor::matrix(2, latent_width);
    for (std::size_t j = 0; j < latent_width; ++j) {
        z(0, j) = z(1, j) = z0(0, j);
    }
    std::vector<std::size_t> classes{ 0, 1 };
    Tensor out = generate(f.generator, f.decoder, z, class_conditions(classes), 50);
    double dist = 0;
    for (std::size_t g = 0; g < out.cols(); ++g) {
        dist += (out(0, g) - out(1, g)) * (out(0, g) - out(1, g));
    }
    EXPECT_GT(dist, 0.0);
}

TEST(Generate, UnknownConditionFails) {
    const auto& f = fixture();
    std::vector<std::size_t> classes{ f.train.class_count };
    EXPECT_THROW(generate(f.generator, f.decoder, Tensor::matrix(1, latent_width), class_conditions(classes), 10), DataError);
}

TEST(Generate, GradientMatchesFiniteDifferences) {
    const auto& f = fixture();
    Rng rng(13);
    Tensor z = tu::random_tensor(2, latent_width, rng);
    std::vector<std::size_t> classes{ 0, 2 };
    auto cond = class_conditions(classes);
    Graph g;
    Var zv = g.param("z", z);
    auto grads = backward(g, sum(generate(g, f.generator, f.decoder, zv, cond, 50)));
    Tensor numeric = finite_diff_grad(
        [&](const Tensor& x) {
            double s = 0;
            for (double v : generate(f.generator, f.decoder, x, cond, 50).data()) {
                s += v;
            }
            return s;
        },
        z, 1e-5);
    EXPECT_LT(tu::relative_error(grads.at("z"), numeric), 1e-4);
}

TEST(Generate, CheckpointRoundTrip) {
    const auto& f = fixture();
    auto path = std::filesystem::temp_directory_path() / "scdd_test_scdg.ckpt";
    save_generator(path.string(), f.generator);
    Generator back = load_generator(path.string());
    EXPECT_EQ(back.params.hash(), f.generator.params.hash());
    EXPECT_EQ(back.schedule.T, f.generator.schedule.T);
    EXPECT_EQ(back.schedule.alpha_bar, f.generator.schedule.alpha_bar);
    EXPECT_EQ(back.class_count, f.generator.class_count);
    EXPECT_EQ(back.latent_sd, f.generator.latent_sd);
    EXPECT_TRUE(back.frozen());
    save_foundation(path.string(), f.encoder, f.decoder);
    EXPECT_THROW(load_generator(path.string()), ParseError);
    std::filesystem::remove(path);
}
