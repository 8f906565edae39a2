#include "scdd/distill.hpp"

#include "scdd/error.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace scdd {

std::vector<std::size_t> LatentCodes::labels() const {
    std::vector<std::size_t> out;
    for (const auto& c : conditions) {
        out.push_back(c.class_id);
    }
    return out;
}

void LatentCodes::validate() const {
    if (z.rank() != 2 || z.rows() != spc * class_count || conditions.size() != z.rows() || source.size() != z.rows()) {
        throw ContractViolation("latent codes: " + shape_string(z.shape()) + " for " + std::to_string(class_count) + " classes x "
                                + std::to_string(spc) + " per class");
    }
    std::vector<std::size_t> counts(class_count, 0);
    for (const auto& c : conditions) {
        if (c.class_id >= class_count) {
            throw ContractViolation("latent codes: class id " + std::to_string(c.class_id) + " out of range");
        }
        counts[c.class_id] += 1;
    }
    for (std::size_t c = 0; c < class_count; ++c) {
        if (counts[c] != spc) {
            throw ContractViolation("latent codes: class " + std::to_string(c) + " has " + std::to_string(counts[c]) + " rows");
        }
    }
    if (!z.all_finite()) {
        throw ContractViolation("latent codes contain non-finite values");
    }
}

std::vector<std::size_t> sample_per_class(const LabeledDataset& train, std::size_t spc, std::uint64_t seed) {
    if (spc == 0) {
        throw ConfigError("spc: must be at least 1");
    }
    const auto parts = class_partition(train);
    Rng rng = Rng::substream(seed, "init_latents");
    std::vector<std::size_t> rows;
    for (std::size_t c = 0; c < parts.size(); ++c) {
        if (parts[c].size() < spc) {
            throw DataError("class " + std::to_string(c) + " has " + std::to_string(parts[c].size()) + " training cells, fewer than spc = "
                            + std::to_string(spc));
        }
        for (auto k : rng.sample_without_replacement(parts[c].size(), spc)) {
            rows.push_back(parts[c][k]);
        }
    }
    return rows;
}

LatentCodes init_latents(const LabeledDataset& train, const Encoder& encoder, std::size_t spc, std::uint64_t seed) {
    LatentCodes codes;
    codes.source = sample_per_class(train, spc, seed);
    codes.spc = spc;
    codes.class_count = train.class_count;
    codes.z = encode(encoder, train.matrix.to_dense(codes.source));
    for (auto i : codes.source) {
        codes.conditions.push_back(train.conditions[i]);
    }
    return codes;
}

Var TaskHead::logits(Graph& graph, Var features) const {
    Var h = features;
    for (std::size_t l = 1; l <= layers; ++l) {
        h = linear(graph, params, "head.l" + std::to_string(l), h);
        if (l < layers) {
            h = relu(h);
        }
    }
    return h;
}

std::vector<std::string> TaskHead::names() const {
    std::vector<std::string> out;
    for (std::size_t l = 1; l <= layers; ++l) {
        out.push_back("head.l" + std::to_string(l) + ".weight");
        out.push_back("head.l" + std::to_string(l) + ".bias");
    }
    return out;
}

TaskHead make_head(std::size_t in_width, std::size_t classes, std::size_t layers, Rng& rng) {
    if (layers == 0 || classes < 2) {
        throw ConfigError("head: need at least one layer and two classes");
    }
    TaskHead head;
    head.layers = layers;
    head.in_width = in_width;
    head.classes = classes;
    for (std::size_t l = 1; l <= layers; ++l) {
        init_linear(head.params, "head.l" + std::to_string(l), in_width, l == layers ? classes : in_width, rng);
    }
    return head;
}

namespace {

Tensor one_hot(std::span<const std::size_t> labels, std::size_t classes) {
    Tensor y = Tensor::matrix(labels.size(), classes);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= classes) {
            throw ShapeError("label " + std::to_string(labels[i]) + " outside " + std::to_string(classes) + " classes");
        }
        y(i, labels[i]) = 1;
    }
    return y;
}

Var sum_all(std::span<const Var> terms) {
    Var total = terms[0];
    for (std::size_t i = 1; i < terms.size(); ++i) {
        total = total + terms[i];
    }
    return total;
}

}

Var cross_entropy(Var logits, std::span<const std::size_t> labels) {
    Graph& g = *logits.graph;
    const std::size_t n = logits.rows(), k = logits.cols();
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    }
    // Shift by the row maximum (a constant) before the log-sum-exp.
    Tensor shift = Tensor::matrix(n, k);
    for (std::size_t r = 0; r < n; ++r) {
        double m = logits.value()(r, 0);
        for (std::size_t c = 1; c < k; ++c) {
            m = std::max(m, logits.value()(r, c));
        }
        for (std::size_t c = 0; c < k; ++c) {
            shift(r, c) = -m;
        }
    }
    Var z = logits + g.constant(shift);
    Var lse = log(sum(exp(z), 1));
    Var log_probs = z - matmul(lse, g.constant(Tensor::matrix(1, k, 1.0)));
    return scale(sum(mul(log_probs, g.constant(one_hot(labels, k)))), -1.0 / static_cast<double>(n));
}

double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
    if (labels.empty()) {
        return 0;
    }
    std::size_t correct = 0;
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < logits.cols(); ++c) {
            if (logits(r, c) > logits(r, best)) {
                best = c;
            }
        }
        correct += best == labels[r] ? 1 : 0;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
}

std::vector<Var> head_cross_entropy_grad(Graph& graph, const TaskHead& head, Var features, std::span<const std::size_t> labels) {
    const std::size_t n = features.rows();
    if (features.cols() != head.in_width || labels.size() != n) {
        throw ShapeError("head gradient: features " + shape_string(features.shape()) + " with " + std::to_string(labels.size())
                         + " labels for a head of width " + std::to_string(head.in_width));
    }
    std::vector<Var> inputs{ features };
    std::vector<Var> masks;
    std::vector<Var> weights;
    Var h = features;
    for (std::size_t l = 1; l <= head.layers; ++l) {
        const std::string name = "head.l" + std::to_string(l);
        Var w = head.params.bind_constant(graph, name + ".weight");
        Var b = head.params.bind_constant(graph, name + ".bias");
        weights.push_back(w);
        Var pre = add(matmul(h, w, false, true), b);
        if (l < head.layers) {
            Tensor mask(pre.shape());
            for (std::size_t i = 0; i < mask.size(); ++i) {
                mask[i] = pre.value()[i] > 0 ? 1.0 : 0.0;
            }
            masks.push_back(graph.constant(std::move(mask)));
            h = relu(pre);
            inputs.push_back(h);
        } else {
            h = pre;
        }
    }
    Var residual = scale(softmax(h) - graph.constant(one_hot(labels, head.classes)), 1.0 / static_cast<double>(n));
    std::vector<Var> grads(2 * head.layers);
    for (std::size_t l = head.layers; l >= 1; --l) {
        grads[2 * (l - 1)] = matmul(residual, inputs[l - 1], true, false);
        grads[2 * (l - 1) + 1] = sum(residual, 0);
        if (l > 1) {
            residual = mul(matmul(residual, weights[l - 1]), masks[l - 2]);
        }
    }
    return grads;
}

std::vector<Tensor> head_cross_entropy_grad(const TaskHead& head, const Tensor& features, std::span<const std::size_t> labels) {
    Graph g;
    std::vector<Tensor> out;
    for (const auto& v : head_cross_entropy_grad(g, head, g.constant(features), labels)) {
        out.push_back(v.value());
    }
    return out;
}

Var dc_loss(std::span<const Var> student, std::span<const Var> expert) {
    if (student.empty() || student.size() != expert.size()) {
        throw ShapeError("dc_loss: gradient part counts differ");
    }
    Graph& g = *student[0].graph;
    std::vector<Var> dots, ns, ne;
    for (std::size_t p = 0; p < student.size(); ++p) {
        if (student[p].shape() != expert[p].shape()) {
            throw ShapeError("dc_loss: part " + std::to_string(p) + " has shapes " + shape_string(student[p].shape()) + " and "
                             + shape_string(expert[p].shape()));
        }
        dots.push_back(sum(mul(student[p], expert[p])));
        ns.push_back(l2_norm(student[p]));
        ne.push_back(l2_norm(expert[p]));
    }
    Var norm_s = l2_norm(concat(ns, 1));
    Var norm_e = l2_norm(concat(ne, 1));
    if (!(norm_s.value().item() > 0) || !(norm_e.value().item() > 0)) {
        throw NumericError("dc_loss: cosine is undefined for a zero gradient");
    }
    Var cosine = mul(sum_all(dots), exp(scale(log(norm_s) + log(norm_e), -1.0)));
    return g.constant(Tensor::scalar(1.0)) - cosine;
}

double dc_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& expert) {
    Graph g;
    std::vector<Var> s, e;
    for (const auto& t : student) {
        s.push_back(g.constant(t));
    }
    for (const auto& t : expert) {
        e.push_back(g.constant(t));
    }
    return dc_loss(s, e).value().item();
}

double dc_loss(const Tensor& student, const Tensor& expert) {
    return dc_loss(std::vector<Tensor>{ student }, std::vector<Tensor>{ expert });
}

Var class_means(Var features, std::span<const std::size_t> labels, std::size_t class_count) {
    if (labels.size() != features.rows()) {
        throw ShapeError("class_means: " + std::to_string(labels.size()) + " labels for " + std::to_string(features.rows()) + " rows");
    }
    std::vector<double> counts(class_count, 0);
    for (auto y : labels) {
        if (y >= class_count) {
            throw ShapeError("class_means: label " + std::to_string(y) + " out of range");
        }
        counts[y] += 1;
    }
    Tensor avg = Tensor::matrix(class_count, labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        avg(labels[i], i) = 1.0 / counts[labels[i]];
    }
    return matmul(features.graph->constant(std::move(avg)), features);
}

Var dm_loss(Var synthetic_features, std::span<const std::size_t> labels, const Tensor& original_means, bool squared) {
    const std::size_t C = original_means.rows();
    std::vector<std::size_t> counts(C, 0);
    for (auto y : labels) {
        if (y >= C) {
            throw DataError("dm_loss: synthetic label " + std::to_string(y) + " has no original class");
        }
        counts[y] += 1;
    }
    for (std::size_t c = 0; c < C; ++c) {
        if (counts[c] == 0) {
            throw DataError("dm_loss: class " + std::to_string(c) + " has no synthetic rows");
        }
    }
    Var diff = class_means(synthetic_features, labels, C) - synthetic_features.graph->constant(original_means);
    std::vector<Var> terms;
    for (std::size_t c = 0; c < C; ++c) {
        Var row = slice(diff, 0, c, c + 1);
        terms.push_back(squared ? sum(square(row)) : l2_norm(row));
    }
    return sum_all(terms);
}

Var dm_loss(const FeatureFn& features, const std::vector<Tensor>& original_parts, Var synthetic, std::span<const std::size_t> labels,
            bool squared) {
    Tensor means;
    for (std::size_t c = 0; c < original_parts.size(); ++c) {
        if (original_parts[c].rows() == 0) {
            throw DataError("dm_loss: class " + std::to_string(c) + " has no original rows");
        }
        Graph side;
        Tensor f = mean(features(side, side.constant(original_parts[c])), 0).value();
        if (c == 0) {
            means = Tensor::matrix(original_parts.size(), f.cols());
        }
        std::copy(f.data().begin(), f.data().end(), means.row(c).begin());
    }
    return dm_loss(features(*synthetic.graph, synthetic), labels, means, squared);
}

std::string to_string(MatchMode mode) {
    switch (mode) {
    case MatchMode::DC:
        return "dc";
    case MatchMode::DM:
        return "dm";
    case MatchMode::DCDM:
        return "dc+dm";
    }
    return "?";
}

MatchMode parse_match_mode(const std::string& text) {
    if (text == "dc") {
        return MatchMode::DC;
    }
    if (text == "dm") {
        return MatchMode::DM;
    }
    if (text == "dc+dm") {
        return MatchMode::DCDM;
    }
    throw ConfigError("distill.mode: expected dc, dm or dc+dm, got '" + text + "'");
}

std::string to_string(Synthesis kind) {
    switch (kind) {
    case Synthesis::Scdg:
        return "scdg";
    case Synthesis::DecoderOnly:
        return "decoder";
    case Synthesis::DataLevel:
        return "data";
    }
    return "?";
}

Synthesis parse_synthesis(const std::string& text) {
    if (text == "scdg") {
        return Synthesis::Scdg;
    }
    if (text == "decoder") {
        return Synthesis::DecoderOnly;
    }
    if (text == "data") {
        return Synthesis::DataLevel;
    }
    throw ConfigError("generator: expected scdg, decoder or data, got '" + text + "'");
}

void DistillConfig::validate() const {
    if (N == 0) {
        throw ConfigError("distill.N: must be at least 1");
    }
    if (spc == 0) {
        throw ConfigError("distill.spc: must be at least 1");
    }
    if (!(lr_z > 0) || !(lr_theta > 0) || !(lr_data > 0)) {
        throw ConfigError("distill.lr_z: learning rates must be positive");
    }
    if (!(momentum >= 0 && momentum < 1)) {
        throw ConfigError("distill.momentum: must lie in [0, 1)");
    }
    if (t_gen == 0) {
        throw ConfigError("distill.t_gen: must be at least 1");
    }
    if (head_layers == 0) {
        throw ConfigError("distill.head_layers: must be at least 1");
    }
    if (expert_batch == 0) {
        throw ConfigError("distill.expert_batch: must be positive");
    }
    if (!(dm_weight >= 0) || !(dc_weight >= 0)) {
        throw ConfigError("distill.dm_weight: weights must be non-negative");
    }
}

void DistillTrace::write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw std::runtime_error("cannot open '" + path + "' for writing");
    }
    out << "step,loss_dm,loss_dc,student_acc,expert_acc\n";
    char buf[160];
    for (const auto& s : steps) {
        std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g,%.17g\n", s.step, s.loss_dm, s.loss_dc, s.student_acc, s.expert_acc);
        out << buf;
    }
}

struct Distiller::State {
    const LabeledDataset& train;
    Encoder encoder;
    const Decoder& decoder;
    const Generator& generator;
    DistillConfig cfg;
    std::vector<std::vector<std::size_t>> parts;
    /** Features and class means of the whole training set under the encoder as passed in. */
    Encoder reference;
    Tensor train_features;
    Tensor original_means;
    Rng expert_rng;
    Rng means_rng;

    State(const LabeledDataset& t, const Encoder& e, const Decoder& d, const Generator& g, const DistillConfig& c)
        : train(t), encoder(e), decoder(d), generator(g), cfg(c), reference(e), expert_rng(Rng::substream(c.seed, "distill.expert")),
          means_rng(Rng::substream(c.seed, "distill.means")) {}

    bool frozen() const { return cfg.freeze_foundation; }

    Var synthesize(Graph& g, Var vars, std::span<const ConditionInfo> conditions, bool checkpoint) const {
        if (cfg.synthesis == Synthesis::DataLevel) {
            return vars;
        }
        GraphFn fn = [this, conditions](Graph& inner, std::span<const Var> in) {
            if (cfg.synthesis == Synthesis::DecoderOnly) {
                return decoder.apply(inner, in[0]);
            }
            return generate(inner, generator, decoder, in[0], conditions, cfg.t_gen);
        };
        if (checkpoint) {
            return checkpointed_apply(g, fn, std::span<const Var>(&vars, 1));
        }
        return fn(g, std::span<const Var>(&vars, 1));
    }

    Tensor features_of(const Encoder& enc, std::span<const std::size_t> cells) const {
        return encode(enc, train.matrix.to_dense(cells));
    }

    Tensor estimate_means() {
        if (frozen()) {
            return original_means;
        }
        Tensor means = Tensor::matrix(train.class_count, latent_width);
        for (std::size_t c = 0; c < parts.size(); ++c) {
            std::vector<std::size_t> cells;
            for (auto k : means_rng.sample_without_replacement(parts[c].size(), std::min<std::size_t>(32, parts[c].size()))) {
                cells.push_back(parts[c][k]);
            }
            Graph g;
            Tensor m = mean(g.constant(features_of(encoder, cells)), 0).value();
            std::copy(m.data().begin(), m.data().end(), means.row(c).begin());
        }
        return means;
    }
};

Distiller::Distiller(const LabeledDataset& train, const Encoder& encoder, const Decoder& decoder, const Generator& generator,
                     const DistillConfig& cfg) {
    cfg.validate();
    if (cfg.freeze_foundation && !(encoder.frozen() && decoder.frozen() && generator.frozen())) {
        throw ContractViolation("distillation with a frozen foundation requires frozen encoder, decoder and generator");
    }
    if (cfg.synthesis == Synthesis::Scdg && cfg.t_gen > generator.schedule.T) {
        throw ConfigError("distill.t_gen: " + std::to_string(cfg.t_gen) + " exceeds the generator's T = "
                          + std::to_string(generator.schedule.T));
    }
    my_state = std::make_unique<State>(train, encoder, decoder, generator, cfg);
    auto& s = *my_state;
    s.parts = class_partition(train);
    for (std::size_t c = 0; c < s.parts.size(); ++c) {
        if (s.parts[c].empty()) {
            throw DataError("class " + std::to_string(c) + " has no training cells");
        }
    }
    s.reference.params.freeze_all();
    s.train_features = encode(s.reference, train.matrix);
    Graph g;
    s.original_means = class_means(g.constant(s.train_features), train.labels, train.class_count).value();
    if (!cfg.freeze_foundation) {
        s.encoder.params.set_frozen("encoder", false);
    }
}

Distiller::~Distiller() = default;

const Encoder& Distiller::feature_encoder() const {
    return my_state->encoder;
}

LatentCodes Distiller::initial() const {
    const auto& s = *my_state;
    if (s.cfg.synthesis != Synthesis::DataLevel) {
        Encoder frozen_copy = s.encoder;
        frozen_copy.params.freeze_all();
        return init_latents(s.train, frozen_copy, s.cfg.spc, s.cfg.seed);
    }
    LatentCodes codes;
    codes.source = sample_per_class(s.train, s.cfg.spc, s.cfg.seed);
    codes.spc = s.cfg.spc;
    codes.class_count = s.train.class_count;
    codes.z = s.train.matrix.to_dense(codes.source);
    for (auto i : codes.source) {
        codes.conditions.push_back(s.train.conditions[i]);
    }
    return codes;
}

Tensor Distiller::synthesize(const LatentCodes& vars) const {
    Graph g;
    return my_state->synthesize(g, g.constant(vars.z), vars.conditions, false).value();
}

Distiller::Evaluation Distiller::evaluate(const LatentCodes& vars, std::size_t step, bool want_grad, bool checkpoint) {
    auto& s = *my_state;
    const auto& cfg = s.cfg;
    const auto labels = vars.labels();
    Evaluation ev;
    ev.record.step = step;

    Rng head_rng = Rng::substream(derive_seed(cfg.seed, "distill.heads"), std::to_string(step));
    TaskHead student = make_head(latent_width, s.train.class_count, cfg.head_layers, head_rng);
    TaskHead expert = student;

    // Features are taken with the encoder as it stands at the start of the step.
    Encoder snapshot = s.encoder;
    snapshot.params.freeze_all();

    Graph g;
    Var v = g.param("vars", vars.z);
    Var synthetic = s.synthesize(g, v, vars.conditions, checkpoint);
    Var features = snapshot.apply(g, synthetic);

    const Tensor means = s.estimate_means();
    Var loss_dm = dm_loss(features, labels, means, cfg.dm_squared);

    std::vector<Var> dc_terms;
    Sgd head_sgd(cfg.lr_theta);
    for (std::size_t n = 0; n < cfg.N; ++n) {
        auto grads_s = head_cross_entropy_grad(g, student, features, labels);

        const std::size_t batch_size = std::min(cfg.expert_batch, s.train.size());
        const auto batch = s.expert_rng.sample_without_replacement(s.train.size(), batch_size);
        std::vector<std::size_t> batch_labels;
        for (auto i : batch) {
            batch_labels.push_back(s.train.labels[i]);
        }
        const Tensor batch_features = s.frozen() ? gather_rows(s.train_features, batch) : s.features_of(s.encoder, batch);
        auto grads_e = head_cross_entropy_grad(expert, batch_features, batch_labels);
        std::vector<Var> expert_vars;
        for (const auto& t : grads_e) {
            expert_vars.push_back(g.constant(t));
        }
        dc_terms.push_back(dc_loss(grads_s, expert_vars));

        const auto names = student.names();
        for (std::size_t p = 0; p < names.size(); ++p) {
            head_sgd.step(student.params.at(names[p]), grads_s[p].value());
        }
        if (s.frozen()) {
            for (std::size_t p = 0; p < names.size(); ++p) {
                head_sgd.step(expert.params.at(names[p]), grads_e[p]);
            }
        } else {
            Graph tune;
            Var x = tune.constant(s.train.matrix.to_dense(batch));
            Var ce = cross_entropy(expert.logits(tune, s.encoder.apply(tune, x)), batch_labels);
            Gradients grads;
            try {
                grads = backward(tune, ce);
            } catch (const NumericError& e) {
                throw TrainingFailure("encoder fine-tuning diverged at distillation step " + std::to_string(step) + ": " + e.what());
            }
            head_sgd.step(s.encoder.params, grads);
            head_sgd.step(expert.params, grads);
        }
    }
    Var loss_dc = sum_all(dc_terms);

    std::vector<Var> objective_terms;
    if (cfg.mode != MatchMode::DC) {
        objective_terms.push_back(scale(loss_dm, cfg.dm_weight));
    }
    if (cfg.mode != MatchMode::DM) {
        objective_terms.push_back(scale(loss_dc, cfg.dc_weight));
    }
    Var objective = objective_terms.size() == 1 ? objective_terms[0] : objective_terms[0] + objective_terms[1];

    ev.record.loss_dm = loss_dm.value().item();
    ev.record.loss_dc = loss_dc.value().item();
    ev.record.objective = objective.value().item();
    if (s.frozen()) {
        ev.record.reference_dm = ev.record.loss_dm;
    } else {
        Graph r;
        Var f = r.constant(encode(s.reference, synthetic.value()));
        ev.record.reference_dm = dm_loss(f, labels, s.original_means, cfg.dm_squared).value().item();
    }

    const Tensor& eval_features = s.frozen() ? s.train_features : encode(s.encoder, s.train.matrix);
    auto head_accuracy = [&](const TaskHead& head) {
        Graph a;
        return accuracy(head.logits(a, a.constant(eval_features)).value(), s.train.labels);
    };
    ev.record.student_acc = head_accuracy(student);
    ev.record.expert_acc = head_accuracy(expert);

    if (want_grad) {
        ev.grad = backward(g, objective).at("vars");
    }
    return ev;
}

DistillResult Distiller::run() {
    auto& s = *my_state;
    const auto& cfg = s.cfg;
    DistillResult result;
    LatentCodes vars = initial();
    Sgd opt(cfg.synthesis == Synthesis::DataLevel ? cfg.lr_data : cfg.lr_z, cfg.momentum);
    for (std::size_t k = 0; k <= cfg.K; ++k) {
        const auto start = std::chrono::steady_clock::now();
        Evaluation ev;
        try {
            ev = evaluate(vars, k, k < cfg.K);
        } catch (const NumericError& e) {
            throw TrainingFailure("distillation step " + std::to_string(k) + ": " + e.what());
        }
        if (!std::isfinite(ev.record.objective)) {
            throw TrainingFailure("distillation step " + std::to_string(k) + ": matching loss is not finite");
        }
        if (k < cfg.K) {
            opt.step(vars.z, ev.grad, "vars");
            if (cfg.synthesis == Synthesis::DataLevel) {
                std::size_t negative = 0;
                for (auto& x : vars.z.data()) {
                    if (x < 0) {
                        ++negative;
                        x = 0;
                    }
                }
                ev.record.negative_fraction = static_cast<double>(negative) / static_cast<double>(vars.z.size());
            }
            if (!vars.z.all_finite()) {
                throw TrainingFailure("distillation step " + std::to_string(k) + ": update produced non-finite values");
            }
        }
        ev.record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        result.trace.steps.push_back(ev.record);
    }

    const Tensor profiles = synthesize(vars);
    result.synthetic.matrix = ExpressionMatrix::from_dense(profiles);
    result.synthetic.class_count = s.train.class_count;
    result.synthetic.condition_names = s.train.condition_names;
    result.synthetic.condition_vocab = s.train.condition_vocab;
    for (std::size_t i = 0; i < vars.conditions.size(); ++i) {
        char id[32];
        std::snprintf(id, sizeof(id), "syn%04zu", i);
        result.synthetic.cell_ids.emplace_back(id);
        result.synthetic.labels.push_back(vars.conditions[i].class_id);
        result.synthetic.conditions.push_back(vars.conditions[i]);
    }
    result.codes = std::move(vars);
    return result;
}

DistillResult distill_run(const LabeledDataset& train, const Encoder& encoder, const Decoder& decoder, const Generator& generator,
                          const DistillConfig& cfg) {
    return Distiller(train, encoder, decoder, generator, cfg).run();
}

}
