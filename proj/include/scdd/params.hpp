#ifndef SCDD_PARAMS_HPP
#define SCDD_PARAMS_HPP

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "autograd.hpp"
#include "rng.hpp"
#include "tensor.hpp"

/**
 * @file params.hpp
 * @brief Named parameter collections, freezing, and first-order optimizers.
 */

namespace scdd {

/**
 * @brief Ordered map of named parameter tensors.
 *
 * A parameter's group is the part of its name before the first '.', e.g. `encoder` for `encoder.l1.weight`.
 * Frozen groups are bound into graphs as constants and skipped by every optimizer.
 */
class ParamSet {
public:
    void add(const std::string& name, Tensor value);

    bool contains(const std::string& name) const { return my_values.count(name) > 0; }

    const Tensor& at(const std::string& name) const;

    Tensor& at(const std::string& name);

    const std::map<std::string, Tensor>& values() const { return my_values; }

    std::size_t size() const { return my_values.size(); }

    /** Total number of scalar entries. */
    std::size_t count() const;

    static std::string group_of(const std::string& name);

    void set_frozen(const std::string& group, bool frozen = true);

    bool is_frozen(const std::string& name) const;

    /** Freeze every group. */
    void freeze_all();

    /**
     * Put `name` into `graph`: as a differentiable parameter if its group is trainable, else as a constant.
     */
    Var bind(Graph& graph, const std::string& name) const;

    /** Bind as a constant regardless of freezing. */
    Var bind_constant(Graph& graph, const std::string& name) const;

    /** FNV-1a over names, shapes and value bits. */
    std::uint64_t hash() const;

    /** Insert all entries of `other`; names must not collide. */
    void merge(const ParamSet& other);

    /** Entries whose group is `group`. */
    ParamSet subset(const std::string& group) const;

private:
    std::map<std::string, Tensor> my_values;
    std::set<std::string> my_frozen;
};

/**
 * @brief Stochastic gradient descent with optional heavy-ball momentum.
 */
class Sgd {
public:
    explicit Sgd(double learning_rate, double momentum = 0) : my_lr(learning_rate), my_momentum(momentum) {}

    /** Update every non-frozen parameter that has an entry in `grads`. */
    void step(ParamSet& params, const Gradients& grads);

    /** Plain update of a single tensor, `x -= lr * g` (with momentum keyed by `key`). */
    void step(Tensor& x, const Tensor& grad, const std::string& key = "");

private:
    double my_lr;
    double my_momentum;
    std::map<std::string, Tensor> my_velocity;
};

/**
 * @brief Adam (Kingma & Ba) with bias correction.
 */
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999, double epsilon = 1e-8)
        : my_lr(learning_rate), my_beta1(beta1), my_beta2(beta2), my_eps(epsilon) {}

    void step(ParamSet& params, const Gradients& grads);

private:
    double my_lr, my_beta1, my_beta2, my_eps;
    std::size_t my_t = 0;
    std::map<std::string, Tensor> my_m, my_v;
};

/**
 * Fully connected layer `name` with weight `out x in` and bias `1 x out`,
 * both drawn from U(-1/sqrt(in), 1/sqrt(in)).
 */
void init_linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng);

/** `x W^T + b` for the layer `name`. */
Var linear(Graph& graph, const ParamSet& params, const std::string& name, Var x);

}

#endif
