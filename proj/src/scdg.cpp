#include "scdd/scdg.hpp"

#include "scdd/checkpoint.hpp"
#include "scdd/error.hpp"

#include <cmath>
#include <numeric>

namespace scdd {

void NoiseSchedule::check_step(std::size_t t) const {
    if (t < 1 || t > T) {
        throw ContractViolation("timestep " + std::to_string(t) + " outside 1.." + std::to_string(T));
    }
}

NoiseSchedule make_schedule(std::size_t T, double beta_min, double beta_max) {
    if (T < 1) {
        throw ConfigError("scdg.T: must be at least 1");
    }
    if (!(beta_min > 0 && beta_min < 1)) {
        throw ConfigError("scdg.beta_min: must lie in (0, 1)");
    }
    if (T > 1 && !(beta_max > beta_min && beta_max < 1)) {
        throw ConfigError("scdg.beta_max: must lie in (beta_min, 1)");
    }
    NoiseSchedule s;
    s.T = T;
    s.beta_min = beta_min;
    s.beta_max = beta_max;
    double abar = 1;
    for (std::size_t t = 1; t <= T; ++t) {
        const double beta = T == 1 ? beta_min
                                   : beta_min + static_cast<double>(t - 1) / static_cast<double>(T - 1) * (beta_max - beta_min);
        abar *= 1 - beta;
        s.beta.push_back(beta);
        s.alpha.push_back(1 - beta);
        s.alpha_bar.push_back(abar);
    }
    return s;
}

namespace {

void check_rows(const Tensor& x, std::size_t n, const char* what) {
    if (x.rank() != 2 || x.rows() != n) {
        throw ShapeError(std::string(what) + ": expected " + std::to_string(n) + " rows, got " + shape_string(x.shape()));
    }
}

// rows x cols matrix whose row r is filled with f(t[r]).
template<typename F>
Tensor per_row(std::size_t rows, std::size_t cols, std::span<const std::size_t> t, F f) {
    Tensor out = Tensor::matrix(rows, cols);
    for (std::size_t r = 0; r < rows; ++r) {
        const double v = f(t[r]);
        for (auto& x : out.row(r)) {
            x = v;
        }
    }
    return out;
}

std::vector<std::size_t> repeat(std::size_t t, std::size_t n) {
    return std::vector<std::size_t>(n, t);
}

}

Diffused forward_diffuse(const Tensor& z0, std::span<const std::size_t> t, const NoiseSchedule& schedule, Rng& rng) {
    check_rows(z0, t.size(), "forward_diffuse");
    for (auto step : t) {
        schedule.check_step(step);
    }
    Diffused out{ Tensor(z0.shape()), Tensor(z0.shape()) };
    for (auto& e : out.eps.data()) {
        e = rng.normal();
    }
    for (std::size_t r = 0; r < z0.rows(); ++r) {
        const double abar = schedule.alpha_bar_at(t[r]);
        const double a = std::sqrt(abar);
        const double b = std::sqrt(1 - abar);
        for (std::size_t c = 0; c < z0.cols(); ++c) {
            out.z_t(r, c) = a * z0(r, c) + b * out.eps(r, c);
        }
    }
    return out;
}

Diffused forward_diffuse(const Tensor& z0, std::size_t t, const NoiseSchedule& schedule, Rng& rng) {
    return forward_diffuse(z0, repeat(t, z0.rows()), schedule, rng);
}

Tensor eps_to_z0(const Tensor& z_t, const Tensor& eps, std::span<const std::size_t> t, const NoiseSchedule& schedule) {
    check_rows(z_t, t.size(), "eps_to_z0");
    if (eps.shape() != z_t.shape()) {
        throw ShapeError("eps_to_z0: noise " + shape_string(eps.shape()) + " vs latents " + shape_string(z_t.shape()));
    }
    Tensor out(z_t.shape());
    for (std::size_t r = 0; r < z_t.rows(); ++r) {
        schedule.check_step(t[r]);
        const double abar = schedule.alpha_bar_at(t[r]);
        const double s = std::sqrt(1 - abar);
        const double c = 1 / std::sqrt(abar);
        for (std::size_t k = 0; k < z_t.cols(); ++k) {
            out(r, k) = (z_t(r, k) - s * eps(r, k)) * c;
        }
    }
    return out;
}

Tensor eps_to_z0(const Tensor& z_t, const Tensor& eps, std::size_t t, const NoiseSchedule& schedule) {
    return eps_to_z0(z_t, eps, repeat(t, z_t.rows()), schedule);
}

Var eps_to_z0(Var z_t, Var eps, std::span<const std::size_t> t, const NoiseSchedule& schedule) {
    check_rows(z_t.value(), t.size(), "eps_to_z0");
    for (auto step : t) {
        schedule.check_step(step);
    }
    Graph& g = *z_t.graph;
    const std::size_t n = z_t.rows(), k = z_t.cols();
    Var s = g.constant(per_row(n, k, t, [&](std::size_t step) { return std::sqrt(1 - schedule.alpha_bar_at(step)); }));
    Var c = g.constant(per_row(n, k, t, [&](std::size_t step) { return 1 / std::sqrt(schedule.alpha_bar_at(step)); }));
    return mul(z_t - mul(s, eps), c);
}

double scdg_loss(const Tensor& z0_pred, const Tensor& z0) {
    if (z0_pred.shape() != z0.shape()) {
        throw ShapeError("scdg_loss: " + shape_string(z0_pred.shape()) + " vs " + shape_string(z0.shape()));
    }
    Graph g;
    return mse(g.constant(z0_pred), g.constant(z0)).value().item();
}

Tensor time_embedding(std::span<const std::size_t> t, std::size_t T) {
    constexpr std::size_t half = time_embedding_width / 2;
    Tensor out = Tensor::matrix(t.size(), time_embedding_width);
    for (std::size_t r = 0; r < t.size(); ++r) {
        const double pos = 1000.0 * static_cast<double>(t[r]) / static_cast<double>(T);
        for (std::size_t i = 0; i < half; ++i) {
            const double angle = pos * std::exp(-std::log(10000.0) * static_cast<double>(i) / static_cast<double>(half));
            out(r, i) = std::sin(angle);
            out(r, half + i) = std::cos(angle);
        }
    }
    return out;
}

void SCDGConfig::validate() const {
    make_schedule(T, beta_min, beta_max);
    if (batch_size == 0) {
        throw ConfigError("scdg.batch_size: must be positive");
    }
    if (!(learning_rate > 0)) {
        throw ConfigError("scdg.learning_rate: must be positive");
    }
    if (t_gen < 1 || t_gen > T) {
        throw ConfigError("scdg.t_gen: must lie in 1..T (" + std::to_string(T) + "), got " + std::to_string(t_gen));
    }
}

Var Generator::embed(Graph& graph, std::span<const ConditionInfo> conditions) const {
    std::vector<std::size_t> ids;
    std::vector<std::vector<std::size_t>> codes(condition_vocab.size());
    for (const auto& c : conditions) {
        if (c.class_id >= class_count) {
            throw DataError("condition class " + std::to_string(c.class_id) + " was not seen in training (" + std::to_string(class_count)
                            + " classes)");
        }
        if (c.codes.size() != condition_vocab.size()) {
            throw DataError("condition has " + std::to_string(c.codes.size()) + " attribute codes, generator expects "
                            + std::to_string(condition_vocab.size()));
        }
        ids.push_back(c.class_id);
        for (std::size_t k = 0; k < codes.size(); ++k) {
            if (c.codes[k] >= condition_vocab[k]) {
                throw DataError("condition attribute " + std::to_string(k) + " code " + std::to_string(c.codes[k])
                                + " was not seen in training");
            }
            codes[k].push_back(c.codes[k]);
        }
    }
    Var out = embedding_lookup(params.bind(graph, "condition.class"), ids);
    for (std::size_t k = 0; k < codes.size(); ++k) {
        out = out + embedding_lookup(params.bind(graph, "condition.attr" + std::to_string(k)), codes[k]);
    }
    return out;
}

double Generator::c_skip(std::size_t t) const {
    const double abar = schedule.alpha_bar_at(t);
    const double s2 = latent_sd * latent_sd;
    return std::sqrt(abar) * s2 / (abar * s2 + 1 - abar);
}

Var Generator::denoise(Graph& graph, Var z_t, std::span<const std::size_t> t, std::span<const ConditionInfo> conditions) const {
    const std::size_t n = z_t.rows();
    if (z_t.cols() != latent_width || t.size() != n || conditions.size() != n) {
        throw ShapeError("denoise: latents " + shape_string(z_t.shape()) + " with " + std::to_string(t.size()) + " timesteps and "
                         + std::to_string(conditions.size()) + " conditions");
    }
    for (auto step : t) {
        schedule.check_step(step);
    }
    auto scope = graph.scope("denoiser");
    Var temb = graph.constant(time_embedding(t, schedule.T));
    Var cemb = embed(graph, conditions);
    std::vector<Var> parts{ z_t, temb, cemb };
    Var h = relu(linear(graph, params, "denoiser.l1", concat(parts, 1)));
    h = relu(linear(graph, params, "denoiser.l2", h));
    Var skip = mul(graph.constant(per_row(n, latent_width, t, [&](std::size_t step) { return c_skip(step); })), z_t);
    return skip + linear(graph, params, "denoiser.l3", h);
}

Generator make_generator(const NoiseSchedule& schedule, std::size_t class_count, const std::vector<std::size_t>& condition_vocab,
                         double latent_sd, Rng& rng) {
    Generator gen;
    gen.schedule = schedule;
    gen.class_count = class_count;
    gen.condition_vocab = condition_vocab;
    gen.latent_sd = latent_sd;
    const std::size_t in = latent_width + time_embedding_width + condition_embedding_width;
    init_linear(gen.params, "denoiser.l1", in, denoiser_hidden, rng);
    init_linear(gen.params, "denoiser.l2", denoiser_hidden, denoiser_hidden, rng);
    init_linear(gen.params, "denoiser.l3", denoiser_hidden, latent_width, rng);
    auto table = [&](std::size_t rows) {
        Tensor t = Tensor::matrix(rows, condition_embedding_width);
        for (auto& v : t.data()) {
            v = rng.normal();
        }
        return t;
    };
    gen.params.add("condition.class", table(class_count));
    for (std::size_t k = 0; k < condition_vocab.size(); ++k) {
        gen.params.add("condition.attr" + std::to_string(k), table(condition_vocab[k]));
    }
    return gen;
}

Generator train_scdg(const Encoder& encoder, const LabeledDataset& train, const SCDGConfig& cfg, SCDGTrainReport* report) {
    cfg.validate();
    if (!encoder.frozen()) {
        throw ContractViolation("train_scdg requires a frozen encoder");
    }
    const std::size_t n = train.size();
    if (n == 0) {
        throw DataError("cannot train the generator on an empty dataset");
    }
    const Tensor z0_all = encode(encoder, train.matrix);
    SCDGTrainReport local;
    local.latent_variance = variance(z0_all);

    Rng init = Rng::substream(cfg.seed, "scdg.init");
    Rng order = Rng::substream(cfg.seed, "scdg.order");
    Rng noise = Rng::substream(cfg.seed, "scdg.noise");
    Generator gen = make_generator(make_schedule(cfg.T, cfg.beta_min, cfg.beta_max), train.class_count, train.condition_vocab,
                                   std::sqrt(local.latent_variance), init);

    auto draw_steps = [&](Rng& rng, std::size_t count) {
        std::vector<std::size_t> t(count);
        for (auto& s : t) {
            s = 1 + rng.uniform_index(cfg.T);
        }
        return t;
    };

    // Fixed probe batch for before/after comparison.
    std::vector<std::size_t> probe_cells(std::min<std::size_t>(n, 512));
    std::iota(probe_cells.begin(), probe_cells.end(), 0);
    Rng probe_rng = Rng::substream(cfg.seed, "scdg.probe");
    const auto probe_t = draw_steps(probe_rng, probe_cells.size());
    const Tensor probe_z0 = gather_rows(z0_all, probe_cells);
    const Diffused probe = forward_diffuse(probe_z0, probe_t, gen.schedule, probe_rng);
    std::vector<ConditionInfo> probe_cond;
    for (auto i : probe_cells) {
        probe_cond.push_back(train.conditions[i]);
    }
    auto probe_loss = [&] {
        Graph g;
        return mse(gen.denoise(g, g.constant(probe.z_t), probe_t, probe_cond), g.constant(probe_z0)).value().item();
    };
    local.initial_probe_loss = probe_loss();

    Adam adam(cfg.learning_rate);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::vector<ConditionInfo> cond;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order.shuffle(perm);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::span<const std::size_t> batch(perm.data() + start, std::min(cfg.batch_size, n - start));
            const auto t = draw_steps(noise, batch.size());
            const Tensor z0 = gather_rows(z0_all, batch);
            const Diffused d = forward_diffuse(z0, t, gen.schedule, noise);
            cond.clear();
            for (auto i : batch) {
                cond.push_back(train.conditions[i]);
            }
            Graph g;
            Gradients grads;
            double loss = 0;
            try {
                Var l = mse(gen.denoise(g, g.constant(d.z_t), t, cond), g.constant(z0));
                loss = l.value().item();
                grads = backward(g, l);
            } catch (const NumericError& e) {
                throw TrainingFailure("generator diverged in epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam.step(gen.params, grads);
            loss_sum += loss;
            ++batches;
        }
        local.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    }
    gen.params.freeze_all();
    local.final_probe_loss = probe_loss();
    if (!std::isfinite(local.final_probe_loss)) {
        throw TrainingFailure("generator loss is not finite after training");
    }
    if (report) {
        *report = std::move(local);
    }
    return gen;
}

Var generate(Graph& graph, const Generator& generator, const Decoder& decoder, Var z, std::span<const ConditionInfo> conditions,
             std::size_t t_gen) {
    const auto t = repeat(t_gen, z.rows());
    return decoder.apply(graph, generator.denoise(graph, z, t, conditions));
}

Tensor generate(const Generator& generator, const Decoder& decoder, const Tensor& z, std::span<const ConditionInfo> conditions,
                std::size_t t_gen) {
    Graph g;
    return generate(g, generator, decoder, g.constant(z), conditions, t_gen).value();
}

Tensor denoise(const Generator& generator, const Tensor& z, std::span<const ConditionInfo> conditions, std::size_t t) {
    Graph g;
    return generator.denoise(g, g.constant(z), repeat(t, z.rows()), conditions).value();
}

void save_generator(const std::string& path, const Generator& generator) {
    std::vector<NamedTensor> records;
    records.emplace_back("schedule", Tensor::matrix(1, 3, { static_cast<double>(generator.schedule.T), generator.schedule.beta_min,
                                                            generator.schedule.beta_max }));
    std::vector<double> meta{ static_cast<double>(generator.class_count), generator.latent_sd,
                              static_cast<double>(generator.condition_vocab.size()) };
    for (auto v : generator.condition_vocab) {
        meta.push_back(static_cast<double>(v));
    }
    records.emplace_back("generator", Tensor(Shape{ 1, meta.size() }, meta));
    for (const auto& [name, value] : generator.params.values()) {
        records.emplace_back(name, value);
    }
    save_checkpoint(path, records);
}

Generator load_generator(const std::string& path) {
    Generator gen;
    bool have_schedule = false, have_meta = false;
    for (auto& [name, value] : load_checkpoint(path)) {
        if (name == "schedule") {
            if (value.size() != 3) {
                throw ParseError(path + ": malformed schedule record");
            }
            gen.schedule = make_schedule(static_cast<std::size_t>(value[0]), value[1], value[2]);
            have_schedule = true;
        } else if (name == "generator") {
            if (value.size() < 3 || value.size() != 3 + static_cast<std::size_t>(value[2])) {
                throw ParseError(path + ": malformed generator record");
            }
            gen.class_count = static_cast<std::size_t>(value[0]);
            gen.latent_sd = value[1];
            for (std::size_t k = 3; k < value.size(); ++k) {
                gen.condition_vocab.push_back(static_cast<std::size_t>(value[k]));
            }
            have_meta = true;
        } else {
            gen.params.add(name, std::move(value));
        }
    }
    if (!have_schedule || !have_meta || !gen.params.contains("denoiser.l1.weight") || !gen.params.contains("condition.class")) {
        throw ParseError(path + ": not a generator checkpoint");
    }
    gen.params.freeze_all();
    return gen;
}

}
