#ifndef SCDD_SCDG_HPP
#define SCDD_SCDG_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "data.hpp"
#include "foundation.hpp"
#include "params.hpp"

/**
 * @file scdg.hpp
 * @brief Single-step conditional diffusion generator over foundation latents.
 *
 * The denoiser predicts the clean latent directly from a noisy latent, the timestep and a learned condition embedding,
 * so generation is one denoiser application followed by the frozen decoder.
 */

namespace scdd {

inline constexpr std::size_t time_embedding_width = 32;
inline constexpr std::size_t condition_embedding_width = 32;
inline constexpr std::size_t denoiser_hidden = 256;

/**
 * @brief Linear beta schedule. Arrays are indexed by `t - 1` for t in 1..T.
 */
struct NoiseSchedule {
    std::size_t T = 0;
    double beta_min = 0;
    double beta_max = 0;
    std::vector<double> beta, alpha, alpha_bar;

    double beta_at(std::size_t t) const { return beta.at(t - 1); }
    double alpha_at(std::size_t t) const { return alpha.at(t - 1); }
    double alpha_bar_at(std::size_t t) const { return alpha_bar.at(t - 1); }

    /** Throws `ContractViolation` unless 1 <= t <= T. */
    void check_step(std::size_t t) const;
};

/**
 * `beta_t = beta_min + (t-1)/(T-1) (beta_max - beta_min)`.
 * T = 1 is accepted as a single noise level at `beta_min`. Throws `ConfigError` on invalid parameters.
 */
NoiseSchedule make_schedule(std::size_t T, double beta_min, double beta_max);

struct Diffused {
    Tensor z_t;
    Tensor eps;
};

/** `z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps` with fresh standard normal `eps`. */
Diffused forward_diffuse(const Tensor& z0, std::size_t t, const NoiseSchedule& schedule, Rng& rng);

/** As above with one timestep per row. */
Diffused forward_diffuse(const Tensor& z0, std::span<const std::size_t> t, const NoiseSchedule& schedule, Rng& rng);

/** `(z_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`. */
Tensor eps_to_z0(const Tensor& z_t, const Tensor& eps, std::size_t t, const NoiseSchedule& schedule);

Tensor eps_to_z0(const Tensor& z_t, const Tensor& eps, std::span<const std::size_t> t, const NoiseSchedule& schedule);

/** Graph form of `eps_to_z0`, one timestep per row; produces the same bits as the tensor form. */
Var eps_to_z0(Var z_t, Var eps, std::span<const std::size_t> t, const NoiseSchedule& schedule);

/** Mean over entries of the squared difference; the training objective on clean latents. */
double scdg_loss(const Tensor& z0_pred, const Tensor& z0);

/** Sinusoidal features of t/T, one row per entry of `t`. */
Tensor time_embedding(std::span<const std::size_t> t, std::size_t T);

struct SCDGConfig {
    std::size_t T = 1000;
    double beta_min = 1e-4;
    double beta_max = 0.1;
    std::size_t epochs = 150;
    std::size_t batch_size = 128;
    double learning_rate = 1e-3;
    /** Timestep at which the denoiser is applied during generation. */
    std::size_t t_gen = 350;
    std::uint64_t seed = 0;

    void validate() const;
};

/**
 * @brief Trained denoiser U and condition embedder tau with their schedule.
 *
 * Parameters: group `denoiser` (MLP 192 -> 256 -> 256 -> 128, relu) and group `condition`
 * (`condition.class` with one row per class, `condition.attr<k>` per extra attribute, summed).
 * The denoiser output is added to `c_skip(t) z_t`, where `c_skip(t) = sqrt(abar) s^2 / (abar s^2 + 1 - abar)`
 * and `s` is the spread of the training latents.
 */
struct Generator {
    NoiseSchedule schedule;
    ParamSet params;
    std::size_t class_count = 0;
    std::vector<std::size_t> condition_vocab;
    double latent_sd = 1;

    /** tau(c), one row per condition. Throws `DataError` for an id outside the training vocabulary. */
    Var embed(Graph& graph, std::span<const ConditionInfo> conditions) const;

    /** U(z_t, t, tau(c)) recorded inside a single `denoiser` scope. */
    Var denoise(Graph& graph, Var z_t, std::span<const std::size_t> t, std::span<const ConditionInfo> conditions) const;

    double c_skip(std::size_t t) const;

    bool frozen() const { return params.is_frozen("denoiser.l1.weight"); }
};

Generator make_generator(const NoiseSchedule& schedule, std::size_t class_count, const std::vector<std::size_t>& condition_vocab,
                         double latent_sd, Rng& rng);

struct SCDGTrainReport {
    /** Loss of the untrained generator on a fixed probe batch, and of the trained one on the same batch. */
    double initial_probe_loss = 0;
    double final_probe_loss = 0;
    /** Variance of the clean latent entries: the loss of a constant predictor. */
    double latent_variance = 0;
    std::vector<double> epoch_loss;
};

/**
 * Train on latents of `train` under the frozen encoder: every step draws a minibatch, one timestep per row
 * uniformly from 1..T, noises the latents and regresses the clean latents. Returns the generator frozen.
 * Throws `TrainingFailure` on a non-finite loss.
 */
Generator train_scdg(const Encoder& encoder, const LabeledDataset& train, const SCDGConfig& cfg, SCDGTrainReport* report = nullptr);

/** D(U(z, t_gen, tau(c))) recorded into `graph`; differentiable in `z`. */
Var generate(Graph& graph, const Generator& generator, const Decoder& decoder, Var z, std::span<const ConditionInfo> conditions,
             std::size_t t_gen);

/** Tensor form of `generate`. */
Tensor generate(const Generator& generator, const Decoder& decoder, const Tensor& z, std::span<const ConditionInfo> conditions,
                std::size_t t_gen);

/** Denoised latents U(z, t, tau(c)) without decoding. */
Tensor denoise(const Generator& generator, const Tensor& z, std::span<const ConditionInfo> conditions, std::size_t t);

void save_generator(const std::string& path, const Generator& generator);

/** Frozen generator. Throws `ParseError` when the file lacks the schedule or metadata records. */
Generator load_generator(const std::string& path);

}

#endif
