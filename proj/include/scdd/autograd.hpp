#ifndef SCDD_AUTOGRAD_HPP
#define SCDD_AUTOGRAD_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "tensor.hpp"

/**
 * @file autograd.hpp
 * @brief Tape-based reverse-mode automatic differentiation over rank-2 tensors.
 *
 * A `Graph` records every operation applied to its `Var` handles in creation order, which is a topological order by construction.
 * Named leaves created with `Graph::param()` receive gradients from `backward()`; everything else is either an intermediate or a constant.
 *
 * The primitive set is deliberately closed:
 * matmul, add, mul, scale, relu, softplus, exp, log, sum, mean, l2_norm, softmax, concat, slice, embedding_lookup and reshape.
 * Broadcasting is limited to adding a 1 x n row vector to every row of an m x n matrix.
 * `checkpointed_apply()` wraps a pure sub-computation whose activations are discarded after the forward pass and rebuilt during backward.
 */

namespace scdd {

enum class OpKind {
    Leaf,
    Constant,
    MatMul,
    Add,
    Mul,
    Scale,
    Relu,
    Softplus,
    Exp,
    Log,
    Sum,
    Mean,
    L2Norm,
    Softmax,
    Concat,
    Slice,
    EmbeddingLookup,
    Reshape,
    Checkpoint
};

const char* op_name(OpKind op);

class Graph;

/**
 * @brief Handle to a node of a `Graph`.
 *
 * Cheap to copy. Only valid while its graph is alive.
 */
struct Var {
    Graph* graph = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    const Shape& shape() const;
    std::size_t rows() const { return value().rows(); }
    std::size_t cols() const { return value().cols(); }
    bool requires_grad() const;
};

/**
 * @brief Counters of activation tensors held by a graph family.
 *
 * A checkpointed region's temporary graphs report into the same counters as their parent.
 */
struct ActivationStats {
    std::size_t live_tensors = 0;
    std::size_t live_elements = 0;
    std::size_t peak_tensors = 0;
    std::size_t peak_elements = 0;

    void reset_peak() {
        peak_tensors = live_tensors;
        peak_elements = live_elements;
    }
};

/**
 * Gradient of the backward output with respect to each named parameter.
 */
using Gradients = std::map<std::string, Tensor>;

/**
 * @brief What a backward pass touched.
 *
 * `scope_applications[name]` is the number of distinct `Graph::scope(name)` regions
 * whose nodes propagated a gradient.
 */
struct BackwardReport {
    std::map<std::string, std::size_t> scope_applications;
    std::size_t nodes_visited = 0;
};

class Graph {
public:
    /**
     * Computes the gradient contribution of a node to each of its inputs.
     * Entries for inputs that do not require a gradient must be left empty.
     */
    using BackwardFn = std::function<std::vector<Tensor>(const Graph& graph, std::size_t node, const Tensor& grad_output)>;

    Graph();

    explicit Graph(std::shared_ptr<ActivationStats> stats);

    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    ~Graph();

    /** A leaf that never receives a gradient. */
    Var constant(Tensor value);

    /** A named leaf whose gradient is reported by `backward()`. Names must be unique within the graph. */
    Var param(const std::string& name, Tensor value);

    const Tensor& value(std::size_t id) const;

    OpKind op(std::size_t id) const;

    const std::vector<std::size_t>& inputs(std::size_t id) const;

    bool requires_grad(std::size_t id) const;

    std::size_t size() const { return my_nodes.size(); }

    const ActivationStats& stats() const { return *my_stats; }

    ActivationStats& stats() { return *my_stats; }

    std::shared_ptr<ActivationStats> stats_handle() const { return my_stats; }

    /**
     * Append a node. Used by the operation implementations.
     * Throws `NumericError` if `value` has a non-finite entry.
     */
    Var record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward);

    /**
     * @brief RAII marker: nodes created while a scope is alive are tagged with it.
     */
    class ScopeGuard {
    public:
        ScopeGuard(Graph& graph, std::size_t previous) : my_graph(&graph), my_previous(previous) {}
        ScopeGuard(const ScopeGuard&) = delete;
        ScopeGuard& operator=(const ScopeGuard&) = delete;
        ~ScopeGuard();

    private:
        Graph* my_graph;
        std::size_t my_previous;
    };

    /** Open a named scope; each call is a distinct application. */
    [[nodiscard]] ScopeGuard scope(const std::string& name);

private:
    friend Gradients backward_seeded(Graph&, Var, const Tensor&, BackwardReport*, bool);

    struct Node {
        OpKind op;
        std::vector<std::size_t> inputs;
        Tensor value;
        bool requires_grad = false;
        bool released = false;
        std::string name;
        std::size_t scope = 0;
        BackwardFn backward;
    };

    void release(Node& node);

    std::vector<Node> my_nodes;
    std::map<std::string, std::size_t> my_params;
    std::shared_ptr<ActivationStats> my_stats;
    std::vector<std::string> my_scope_names;
    std::size_t my_current_scope = 0;
};

/**
 * Reverse-mode gradient of a scalar `output` with respect to every named parameter of `graph`.
 * Parameters that do not influence `output` map to zero tensors.
 *
 * Activations are released as soon as they are no longer needed, so the graph cannot be
 * differentiated again unless `retain_graph` is set.
 *
 * Throws `ContractViolation` when `output` is not a single value, and `NumericError` naming the node
 * when a non-finite gradient appears.
 */
Gradients backward(Graph& graph, Var output, BackwardReport* report = nullptr, bool retain_graph = false);

/**
 * As `backward()`, but seeds the output gradient with `seed` (same shape as `output`) instead of 1.
 */
Gradients backward_seeded(Graph& graph, Var output, const Tensor& seed, BackwardReport* report = nullptr, bool retain_graph = false);

// Primitives.

/** `op(a) * op(b)` where `op` optionally transposes. */
Var matmul(Var a, Var b, bool transpose_a = false, bool transpose_b = false);

/** Elementwise sum; `b` may also be a 1 x n row vector added to every row of `a`. */
Var add(Var a, Var b);

/** Elementwise product of equally shaped tensors. */
Var mul(Var a, Var b);

Var scale(Var a, double factor);

Var relu(Var a);

/** `log(1 + exp(a))`, evaluated stably. */
Var softplus(Var a);

Var exp(Var a);

Var log(Var a);

/** Sum of all entries, as a 1 x 1 tensor. */
Var sum(Var a);

/** Sum along `axis`: 0 collapses rows (result 1 x n), 1 collapses columns (result m x 1). */
Var sum(Var a, int axis);

Var mean(Var a);

Var mean(Var a, int axis);

/** Euclidean (Frobenius) norm of all entries. The gradient at zero is taken as zero. */
Var l2_norm(Var a);

/** Row-wise softmax. */
Var softmax(Var a);

/** Concatenate along `axis` (0 stacks rows, 1 stacks columns). */
Var concat(std::span<const Var> parts, int axis);

/** Half-open range [begin, end) along `axis`. */
Var slice(Var a, int axis, std::size_t begin, std::size_t end);

/** Rows `ids` of `table`. */
Var embedding_lookup(Var table, std::span<const std::size_t> ids);

/** Same row-major values viewed as `rows x cols`. */
Var reshape(Var a, std::size_t rows, std::size_t cols);

// Conveniences composed from the primitives.

inline Var operator+(Var a, Var b) { return add(a, b); }

inline Var operator-(Var a, Var b) { return add(a, scale(b, -1.0)); }

inline Var operator*(Var a, Var b) { return mul(a, b); }

inline Var operator*(double s, Var a) { return scale(a, s); }

inline Var square(Var a) { return mul(a, a); }

/** Mean of squared differences over all entries. */
inline Var mse(Var a, Var b) { return mean(square(a - b)); }

/**
 * A function from graph inputs to a graph output, rebuilt on demand by `checkpointed_apply()`.
 * Must be pure: identical inputs give bitwise identical outputs.
 */
using GraphFn = std::function<Var(Graph& graph, std::span<const Var> inputs)>;

/**
 * Evaluate `fn` on `inputs` without keeping its internal activations.
 *
 * Only the output is stored in `graph`. During backward, `fn` is re-executed on the saved inputs to rebuild
 * its activations; the resulting gradients are bitwise equal to recording `fn` directly.
 * A re-execution whose output differs from the original in any bit raises `ContractViolation`.
 */
Var checkpointed_apply(Graph& graph, GraphFn fn, std::span<const Var> inputs);

/**
 * Central finite-difference estimate of the gradient of `fn` at `x`:
 * `(fn(x + eps e_i) - fn(x - eps e_i)) / (2 eps)` per coordinate.
 */
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x, double eps);

}

#endif
