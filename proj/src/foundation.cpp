#include "scdd/foundation.hpp"

#include "scdd/checkpoint.hpp"
#include "scdd/error.hpp"

#include <cmath>
#include <numeric>

namespace scdd {

namespace {

constexpr std::size_t block_rows = 1024;

void check_width(const Tensor& x, std::size_t expected, const char* what) {
    if (x.rank() != 2 || x.cols() != expected) {
        throw ShapeError(std::string(what) + " expects " + std::to_string(expected) + " columns, got " + shape_string(x.shape()));
    }
}

}

Var Encoder::apply(Graph& graph, Var x) const {
    auto scope = graph.scope("encoder");
    return linear(graph, params, "encoder.l2", relu(linear(graph, params, "encoder.l1", x)));
}

Var Decoder::apply(Graph& graph, Var z) const {
    auto scope = graph.scope("decoder");
    return softplus(linear(graph, params, "decoder.l2", relu(linear(graph, params, "decoder.l1", z))));
}

Encoder make_encoder(std::size_t genes, Rng& rng) {
    Encoder e;
    e.genes = genes;
    init_linear(e.params, "encoder.l1", genes, foundation_hidden, rng);
    init_linear(e.params, "encoder.l2", foundation_hidden, latent_width, rng);
    return e;
}

Decoder make_decoder(std::size_t genes, Rng& rng) {
    Decoder d;
    d.genes = genes;
    init_linear(d.params, "decoder.l1", latent_width, foundation_hidden, rng);
    init_linear(d.params, "decoder.l2", foundation_hidden, genes, rng);
    return d;
}

void AEConfig::validate() const {
    if (batch_size == 0) {
        throw ConfigError("foundation.batch_size: must be positive");
    }
    if (!(learning_rate > 0)) {
        throw ConfigError("foundation.learning_rate: must be positive");
    }
}

Tensor encode(const Encoder& encoder, const Tensor& x) {
    check_width(x, encoder.genes, "encode");
    Graph g;
    return encoder.apply(g, g.constant(x)).value();
}

Tensor encode(const Encoder& encoder, const ExpressionMatrix& m) {
    if (m.n_genes() != encoder.genes) {
        throw ShapeError("encode expects " + std::to_string(encoder.genes) + " genes, got " + std::to_string(m.n_genes()));
    }
    Tensor out = Tensor::matrix(m.n_cells(), latent_width);
    std::vector<std::size_t> cells;
    for (std::size_t start = 0; start < m.n_cells(); start += block_rows) {
        cells.resize(std::min(block_rows, m.n_cells() - start));
        std::iota(cells.begin(), cells.end(), start);
        Tensor z = encode(encoder, m.to_dense(cells));
        for (std::size_t i = 0; i < cells.size(); ++i) {
            auto src = z.row(i);
            std::copy(src.begin(), src.end(), out.row(start + i).begin());
        }
    }
    return out;
}

Tensor decode(const Decoder& decoder, const Tensor& z) {
    check_width(z, latent_width, "decode");
    Graph g;
    return decoder.apply(g, g.constant(z)).value();
}

double reconstruction_mse(const Encoder& encoder, const Decoder& decoder, const ExpressionMatrix& m) {
    double total = 0;
    std::vector<std::size_t> cells;
    for (std::size_t start = 0; start < m.n_cells(); start += block_rows) {
        cells.resize(std::min(block_rows, m.n_cells() - start));
        std::iota(cells.begin(), cells.end(), start);
        Tensor x = m.to_dense(cells);
        Tensor r = decode(decoder, encode(encoder, x));
        for (std::size_t i = 0; i < x.size(); ++i) {
            total += (r[i] - x[i]) * (r[i] - x[i]);
        }
    }
    return total / (static_cast<double>(m.n_cells()) * static_cast<double>(m.n_genes()));
}

std::pair<Encoder, Decoder> train_autoencoder(const LabeledDataset& train, const AEConfig& cfg, AETrainReport* report) {
    cfg.validate();
    const std::size_t n = train.matrix.n_cells();
    if (n == 0) {
        throw DataError("cannot train the autoencoder on an empty dataset");
    }
    Rng init = Rng::substream(cfg.seed, "foundation.init");
    Rng order = Rng::substream(cfg.seed, "foundation.order");
    Encoder encoder = make_encoder(train.matrix.n_genes(), init);
    Decoder decoder = make_decoder(train.matrix.n_genes(), init);

    AETrainReport local;
    local.initial_mse = reconstruction_mse(encoder, decoder, train.matrix);

    ParamSet joint = encoder.params;
    joint.merge(decoder.params);
    Adam adam(cfg.learning_rate);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        order.shuffle(perm);
        double loss_sum = 0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::span<const std::size_t> batch(perm.data() + start, std::min(cfg.batch_size, n - start));
            Graph g;
            Var x = g.constant(train.matrix.to_dense(batch));
            Gradients grads;
            double loss = 0;
            try {
                Var h = relu(linear(g, joint, "encoder.l1", x));
                Var z = linear(g, joint, "encoder.l2", h);
                Var r = softplus(linear(g, joint, "decoder.l2", relu(linear(g, joint, "decoder.l1", z))));
                Var l = mse(r, x);
                loss = l.value().item();
                grads = backward(g, l);
            } catch (const NumericError& e) {
                throw TrainingFailure("autoencoder diverged in epoch " + std::to_string(epoch) + ": " + e.what());
            }
            adam.step(joint, grads);
            loss_sum += loss;
            ++batches;
        }
        local.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
        if (!std::isfinite(local.epoch_loss.back())) {
            throw TrainingFailure("autoencoder loss is not finite after epoch " + std::to_string(epoch));
        }
    }

    encoder.params = joint.subset("encoder");
    decoder.params = joint.subset("decoder");
    encoder.params.freeze_all();
    decoder.params.freeze_all();
    local.final_mse = reconstruction_mse(encoder, decoder, train.matrix);
    if (!std::isfinite(local.final_mse)) {
        throw TrainingFailure("autoencoder reconstruction error is not finite");
    }
    if (report) {
        *report = std::move(local);
    }
    return { std::move(encoder), std::move(decoder) };
}

void save_foundation(const std::string& path, const Encoder& encoder, const Decoder& decoder) {
    ParamSet all = encoder.params;
    all.merge(decoder.params);
    save_checkpoint(path, all);
}

std::pair<Encoder, Decoder> load_foundation(const std::string& path) {
    ParamSet all = load_params(path);
    for (const char* name : { "encoder.l1.weight", "encoder.l2.weight", "decoder.l1.weight", "decoder.l2.weight" }) {
        if (!all.contains(name)) {
            throw ParseError(path + ": not a foundation checkpoint (missing '" + name + "')");
        }
    }
    Encoder e;
    Decoder d;
    e.params = all.subset("encoder");
    d.params = all.subset("decoder");
    e.genes = e.params.at("encoder.l1.weight").cols();
    d.genes = d.params.at("decoder.l2.weight").rows();
    if (e.params.at("encoder.l2.weight").rows() != latent_width || d.params.at("decoder.l1.weight").cols() != latent_width
        || e.genes != d.genes) {
        throw ParseError(path + ": foundation checkpoint has inconsistent layer shapes");
    }
    e.params.freeze_all();
    d.params.freeze_all();
    return { std::move(e), std::move(d) };
}

}
