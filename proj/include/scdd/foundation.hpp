#ifndef SCDD_FOUNDATION_HPP
#define SCDD_FOUNDATION_HPP

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "autograd.hpp"
#include "data.hpp"
#include "params.hpp"

/**
 * @file foundation.hpp
 * @brief Encoder/decoder pair mapping expression profiles to 128-dim latents and back.
 *
 * The frozen encoder also serves as the feature extractor for matching losses and evaluation heads.
 */

namespace scdd {

inline constexpr std::size_t latent_width = 128;
inline constexpr std::size_t foundation_hidden = 512;

/**
 * @brief MLP genes -> 512 -> 128 with a relu hidden layer. Parameters live in group `encoder`.
 */
struct Encoder {
    ParamSet params;
    std::size_t genes = 0;

    /** Record the forward pass. Frozen parameters enter the graph as constants. */
    Var apply(Graph& graph, Var x) const;

    bool frozen() const { return params.is_frozen("encoder.l1.weight"); }
};

/**
 * @brief MLP 128 -> 512 -> genes, relu hidden layer, softplus output. Parameters live in group `decoder`.
 */
struct Decoder {
    ParamSet params;
    std::size_t genes = 0;

    Var apply(Graph& graph, Var z) const;

    bool frozen() const { return params.is_frozen("decoder.l1.weight"); }
};

Encoder make_encoder(std::size_t genes, Rng& rng);

Decoder make_decoder(std::size_t genes, Rng& rng);

struct AEConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

struct AETrainReport {
    double initial_mse = 0;
    double final_mse = 0;
    /** Mean minibatch loss of each epoch. */
    std::vector<double> epoch_loss;
};

/**
 * Fit both networks with Adam on the mean squared reconstruction error, then freeze them.
 * Throws `TrainingFailure` if the loss stops being finite.
 */
std::pair<Encoder, Decoder> train_autoencoder(const LabeledDataset& train, const AEConfig& cfg, AETrainReport* report = nullptr);

/** Latents of the rows of `x`. Throws `ShapeError` if the width differs from `encoder.genes`. */
Tensor encode(const Encoder& encoder, const Tensor& x);

/** Latents of every cell, computed in blocks so the dense matrix is never materialized whole. */
Tensor encode(const Encoder& encoder, const ExpressionMatrix& m);

/** Non-negative reconstructions of latent rows. */
Tensor decode(const Decoder& decoder, const Tensor& z);

/** Mean squared error of `decode(encode(x))` against `x`, over all entries. */
double reconstruction_mse(const Encoder& encoder, const Decoder& decoder, const ExpressionMatrix& m);

void save_foundation(const std::string& path, const Encoder& encoder, const Decoder& decoder);

/** Both networks, frozen. Throws `ParseError` if the file is not a foundation checkpoint. */
std::pair<Encoder, Decoder> load_foundation(const std::string& path);

}

#endif
