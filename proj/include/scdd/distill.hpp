#ifndef SCDD_DISTILL_HPP
#define SCDD_DISTILL_HPP

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "data.hpp"
#include "foundation.hpp"
#include "params.hpp"
#include "scdg.hpp"

/**
 * @file distill.hpp
 * @brief Latent-code dataset distillation: matching losses, task heads and the distillation loop.
 */

namespace scdd {

/**
 * @brief Optimized latent codes, `spc` rows per class in class order.
 */
struct LatentCodes {
    Tensor z;
    std::vector<ConditionInfo> conditions;
    /** Training-set index of the cell each row was initialized from. */
    std::vector<std::size_t> source;
    std::size_t spc = 0;
    std::size_t class_count = 0;

    std::vector<std::size_t> labels() const;

    /** Throws `ContractViolation` if rows per class, finiteness or condition ids are off. */
    void validate() const;
};

/**
 * Per class, `spc` distinct cells drawn uniformly without replacement (class order, then draw order).
 * Throws `DataError` naming the first class with fewer than `spc` cells.
 */
std::vector<std::size_t> sample_per_class(const LabeledDataset& train, std::size_t spc, std::uint64_t seed);

/** Codes `E(x)` of the cells chosen by `sample_per_class`. */
LatentCodes init_latents(const LabeledDataset& train, const Encoder& encoder, std::size_t spc, std::uint64_t seed);

/**
 * @brief Classification head on 128-dim features: `layers` linear maps with relu between them.
 *
 * Parameters `head.l1` .. `head.l<layers>`; hidden width equals the input width.
 */
struct TaskHead {
    ParamSet params;
    std::size_t layers = 1;
    std::size_t in_width = 0;
    std::size_t classes = 0;

    Var logits(Graph& graph, Var features) const;

    /** Parameter names in the fixed order used for flattened gradients: l1.weight, l1.bias, l2.weight, ... */
    std::vector<std::string> names() const;
};

TaskHead make_head(std::size_t in_width, std::size_t classes, std::size_t layers, Rng& rng);

/** Mean cross-entropy of row-wise logits against integer labels. */
Var cross_entropy(Var logits, std::span<const std::size_t> labels);

/** Fraction of rows whose arg-max logit equals the label (ties go to the lowest class). */
double accuracy(const Tensor& logits, std::span<const std::size_t> labels);

/**
 * Gradient of the mean cross-entropy with respect to every head parameter, in `names()` order,
 * built from graph operations on `features` so that it can itself be differentiated.
 * For one layer: `dW = (softmax(F W^T + b) - Y)^T F / n`, `db = column sums of the residual / n`.
 * Deeper heads back-propagate the residual by hand; relu masks are treated as constants.
 */
std::vector<Var> head_cross_entropy_grad(Graph& graph, const TaskHead& head, Var features, std::span<const std::size_t> labels);

std::vector<Tensor> head_cross_entropy_grad(const TaskHead& head, const Tensor& features, std::span<const std::size_t> labels);

/**
 * `1 - cos` between two gradients flattened over all parts. Throws `NumericError` if either has zero norm.
 */
Var dc_loss(std::span<const Var> student, std::span<const Var> expert);

double dc_loss(const std::vector<Tensor>& student, const std::vector<Tensor>& expert);

double dc_loss(const Tensor& student, const Tensor& expert);

/** `means[c]` = average of the rows of `features` labelled `c`, as a graph operation. */
Var class_means(Var features, std::span<const std::size_t> labels, std::size_t class_count);

/**
 * Sum over classes of `||mean F(o) - mean F(s)||` (squared norms when `squared`).
 * `original_means` is `class_count x width`. Throws `DataError` if a class has no synthetic row.
 */
Var dm_loss(Var synthetic_features, std::span<const std::size_t> labels, const Tensor& original_means, bool squared = false);

using FeatureFn = std::function<Var(Graph&, Var)>;

/** Convenience form taking the original cells per class and a feature map. */
Var dm_loss(const FeatureFn& features, const std::vector<Tensor>& original_parts, Var synthetic, std::span<const std::size_t> labels,
            bool squared = false);

enum class MatchMode { DC, DM, DCDM };

std::string to_string(MatchMode mode);

MatchMode parse_match_mode(const std::string& text);

/** What the optimized variables are and how synthetic data is produced from them. */
enum class Synthesis {
    /** S = D(U(Z, t_gen, tau(c))). */
    Scdg,
    /** S = D(Z). */
    DecoderOnly,
    /** S itself, clamped at zero after every update. */
    DataLevel
};

std::string to_string(Synthesis kind);

Synthesis parse_synthesis(const std::string& text);

struct DistillConfig {
    std::size_t K = 200;
    std::size_t N = 10;
    std::size_t spc = 1;
    MatchMode mode = MatchMode::DM;
    double lr_z = 1.0;
    double lr_theta = 0.1;
    double momentum = 0;
    std::size_t t_gen = 350;
    bool freeze_foundation = true;
    bool dm_squared = false;
    double dm_weight = 1;
    double dc_weight = 1;
    std::size_t head_layers = 1;
    std::size_t expert_batch = 256;
    Synthesis synthesis = Synthesis::Scdg;
    /** Learning rate for data-level updates of expression values. */
    double lr_data = 0.05;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DistillStep {
    std::size_t step = 0;
    double loss_dm = 0;
    double loss_dc = 0;
    /** Objective actually minimized: the mode-weighted sum. */
    double objective = 0;
    /** DM loss of the current synthetic set under the original encoder; equals `loss_dm` in frozen mode. */
    double reference_dm = 0;
    double student_acc = 0;
    double expert_acc = 0;
    double seconds = 0;
    /** Data-level only: fraction of expression values that were negative before clamping. */
    double negative_fraction = 0;
};

struct DistillTrace {
    std::vector<DistillStep> steps;

    /** Columns step,loss_dm,loss_dc,student_acc,expert_acc. Wall time is left out to keep the file reproducible. */
    void write_csv(const std::string& path) const;
};

struct DistillResult {
    LatentCodes codes;
    /** Generated (or directly optimized) expression profiles with their labels and conditions. */
    LabeledDataset synthetic;
    DistillTrace trace;
};

/**
 * @brief One distillation run over a fixed training set and frozen networks.
 *
 * Each step k rebuilds the synthetic set from the current variables, re-initializes the student and expert heads
 * identically, runs N interleaved head updates (student on the synthetic set, expert on an original minibatch),
 * and descends the matching objective with respect to the variables only.
 *
 * With `freeze_foundation = false` the feature extractor is a private copy of the encoder that is fine-tuned
 * together with the expert head by cross-entropy on original minibatches, and original class means are re-estimated
 * from minibatches under the drifting encoder.
 */
class Distiller {
public:
    Distiller(const LabeledDataset& train, const Encoder& encoder, const Decoder& decoder, const Generator& generator,
              const DistillConfig& cfg);

    ~Distiller();

    /** Starting variables: latent codes, or for data-level synthesis the sampled profiles stored in `z`. */
    LatentCodes initial() const;

    /** Synthetic profiles for the given variables. */
    Tensor synthesize(const LatentCodes& vars) const;

    struct Evaluation {
        DistillStep record;
        /** Gradient of the objective with respect to the variables (empty unless requested). */
        Tensor grad;
    };

    /**
     * Losses of step `step` at `vars`, training the heads (and in unfrozen mode the encoder copy) as a side effect.
     * `checkpoint` selects whether generation runs under `checkpointed_apply`.
     */
    Evaluation evaluate(const LatentCodes& vars, std::size_t step, bool want_grad, bool checkpoint = true);

    /** The full loop. Throws `TrainingFailure` with the step index on a non-finite loss. */
    DistillResult run();

    /** Encoder currently used for features (differs from the input only in unfrozen mode). */
    const Encoder& feature_encoder() const;

private:
    struct State;
    std::unique_ptr<State> my_state;
};

/** `Distiller(...).run()`. */
DistillResult distill_run(const LabeledDataset& train, const Encoder& encoder, const Decoder& decoder, const Generator& generator,
                          const DistillConfig& cfg);

}

#endif
