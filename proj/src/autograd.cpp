#include "scdd/autograd.hpp"

#include "scdd/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <set>

namespace scdd {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMat> view(const Tensor& t) {
    return Eigen::Map<const RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

Eigen::Map<RowMat> view(Tensor& t) {
    return Eigen::Map<RowMat>(t.data().data(), static_cast<Eigen::Index>(t.rows()), static_cast<Eigen::Index>(t.cols()));
}

// op(x) * op(y), with op an optional transpose.
Tensor gemm(const Tensor& x, bool tx, const Tensor& y, bool ty) {
    const std::size_t m = tx ? x.cols() : x.rows();
    const std::size_t kx = tx ? x.rows() : x.cols();
    const std::size_t ky = ty ? y.cols() : y.rows();
    const std::size_t n = ty ? y.rows() : y.cols();
    if (kx != ky) {
        throw ShapeError("matmul: inner dimensions differ (" + shape_string(x.shape()) + (tx ? "^T" : "") + " * "
                         + shape_string(y.shape()) + (ty ? "^T" : "") + ")");
    }
    Tensor out = Tensor::matrix(m, n);
    if (m == 0 || n == 0) {
        return out;
    }
    auto o = view(out);
    auto a = view(x);
    auto b = view(y);
    if (!tx && !ty) {
        o.noalias() = a * b;
    } else if (!tx && ty) {
        o.noalias() = a * b.transpose();
    } else if (tx && !ty) {
        o.noalias() = a.transpose() * b;
    } else {
        o.noalias() = a.transpose() * b.transpose();
    }
    return out;
}

Graph& graph_of(Var a) {
    if (a.graph == nullptr) {
        throw ContractViolation("operation on a detached Var");
    }
    return *a.graph;
}

Graph& graph_of(Var a, Var b) {
    if (a.graph != b.graph || a.graph == nullptr) {
        throw ContractViolation("operands belong to different graphs");
    }
    return *a.graph;
}

void require_matrix(const Tensor& t, const char* op) {
    if (t.rank() != 2) {
        throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_string(t.shape()));
    }
}

template<typename Fn>
Tensor map_values(const Tensor& x, Fn fn) {
    Tensor out(x.shape());
    auto src = x.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) {
        dst[i] = fn(src[i]);
    }
    return out;
}

double stable_softplus(double x) {
    return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

}

const char* op_name(OpKind op) {
    switch (op) {
        case OpKind::Leaf: return "leaf";
        case OpKind::Constant: return "constant";
        case OpKind::MatMul: return "matmul";
        case OpKind::Add: return "add";
        case OpKind::Mul: return "mul";
        case OpKind::Scale: return "scale";
        case OpKind::Relu: return "relu";
        case OpKind::Softplus: return "softplus";
        case OpKind::Exp: return "exp";
        case OpKind::Log: return "log";
        case OpKind::Sum: return "sum";
        case OpKind::Mean: return "mean";
        case OpKind::L2Norm: return "l2_norm";
        case OpKind::Softmax: return "softmax";
        case OpKind::Concat: return "concat";
        case OpKind::Slice: return "slice";
        case OpKind::EmbeddingLookup: return "embedding_lookup";
        case OpKind::Reshape: return "reshape";
        case OpKind::Checkpoint: return "checkpoint";
    }
    return "?";
}

const Tensor& Var::value() const {
    return graph_of(*this).value(id);
}

const Shape& Var::shape() const {
    return value().shape();
}

bool Var::requires_grad() const {
    return graph_of(*this).requires_grad(id);
}

Graph::Graph() : Graph(std::make_shared<ActivationStats>()) {}

Graph::Graph(std::shared_ptr<ActivationStats> stats) : my_stats(std::move(stats)), my_scope_names{ "" } {}

Graph::~Graph() {
    for (auto& node : my_nodes) {
        release(node);
    }
}

void Graph::release(Node& node) {
    if (node.released) {
        return;
    }
    node.released = true;
    my_stats->live_tensors -= 1;
    my_stats->live_elements -= node.value.size();
    node.value = Tensor();
}

Var Graph::record(OpKind op, std::vector<std::size_t> inputs, Tensor value, BackwardFn backward) {
    const std::size_t id = my_nodes.size();
    if (!value.all_finite()) {
        throw NumericError(std::string("non-finite value produced by node #") + std::to_string(id) + " (" + op_name(op) + ")");
    }

    Node node;
    node.op = op;
    node.inputs = std::move(inputs);
    node.scope = my_current_scope;
    for (auto in : node.inputs) {
        if (in >= id) {
            throw ContractViolation("node input does not precede the node");
        }
        node.requires_grad = node.requires_grad || my_nodes[in].requires_grad;
    }
    if (node.requires_grad) {
        node.backward = std::move(backward);
    }

    my_stats->live_tensors += 1;
    my_stats->live_elements += value.size();
    my_stats->peak_tensors = std::max(my_stats->peak_tensors, my_stats->live_tensors);
    my_stats->peak_elements = std::max(my_stats->peak_elements, my_stats->live_elements);

    node.value = std::move(value);
    my_nodes.push_back(std::move(node));
    return Var{ this, id };
}

Var Graph::constant(Tensor value) {
    return record(OpKind::Constant, {}, std::move(value), nullptr);
}

Var Graph::param(const std::string& name, Tensor value) {
    if (my_params.count(name)) {
        throw ContractViolation("duplicate parameter name '" + name + "'");
    }
    Var v = record(OpKind::Leaf, {}, std::move(value), nullptr);
    my_nodes[v.id].requires_grad = true;
    my_nodes[v.id].name = name;
    my_params[name] = v.id;
    return v;
}

const Tensor& Graph::value(std::size_t id) const {
    const auto& node = my_nodes.at(id);
    if (node.released) {
        throw ContractViolation("value of node #" + std::to_string(id) + " was released by backward()");
    }
    return node.value;
}

OpKind Graph::op(std::size_t id) const {
    return my_nodes.at(id).op;
}

const std::vector<std::size_t>& Graph::inputs(std::size_t id) const {
    return my_nodes.at(id).inputs;
}

bool Graph::requires_grad(std::size_t id) const {
    return my_nodes.at(id).requires_grad;
}

Graph::ScopeGuard::~ScopeGuard() {
    my_graph->my_current_scope = my_previous;
}

Graph::ScopeGuard Graph::scope(const std::string& name) {
    const std::size_t previous = my_current_scope;
    my_current_scope = my_scope_names.size();
    my_scope_names.push_back(name);
    return ScopeGuard(*this, previous);
}

namespace {

// Set while a backward pass runs so checkpointed regions can forward their scope counts.
thread_local BackwardReport* active_report = nullptr;
thread_local int backward_depth = 0;

struct DepthGuard {
    DepthGuard() { ++backward_depth; }
    ~DepthGuard() { --backward_depth; }
};

}

Gradients backward_seeded(Graph& graph, Var output, const Tensor& seed, BackwardReport* report, bool retain_graph) {
    if (output.graph != &graph) {
        throw ContractViolation("backward output belongs to another graph");
    }
    if (seed.shape() != graph.value(output.id).shape()) {
        throw ShapeError("backward seed " + shape_string(seed.shape()) + " does not match output "
                         + shape_string(graph.value(output.id).shape()));
    }

    auto& nodes = graph.my_nodes;
    std::vector<Tensor> grads(output.id + 1);
    std::vector<char> has_grad(output.id + 1, 0);
    if (nodes[output.id].requires_grad) {
        grads[output.id] = seed;
        has_grad[output.id] = 1;
    }

    std::map<std::string, Shape> param_shapes;
    for (const auto& [name, id] : graph.my_params) {
        param_shapes[name] = nodes[id].value.shape();
    }

    BackwardReport* previous_report = active_report;
    active_report = report;
    std::set<std::size_t> scopes_seen;
    if (backward_depth == 0) {
        graph.my_stats->reset_peak();
    }
    DepthGuard depth;

    for (std::size_t i = output.id + 1; i-- > 0;) {
        auto& node = nodes[i];
        if (has_grad[i] && node.backward) {
            std::vector<Tensor> contributions = node.backward(graph, i, grads[i]);
            for (std::size_t k = 0; k < node.inputs.size(); ++k) {
                if (k >= contributions.size() || contributions[k].empty()) {
                    continue;
                }
                const std::size_t in = node.inputs[k];
                if (!nodes[in].requires_grad) {
                    continue;
                }
                if (!contributions[k].all_finite()) {
                    active_report = previous_report;
                    throw NumericError("non-finite gradient produced by node #" + std::to_string(i) + " ("
                                       + op_name(node.op) + ") for its input #" + std::to_string(k));
                }
                if (has_grad[in]) {
                    grads[in] += contributions[k];
                } else {
                    grads[in] = std::move(contributions[k]);
                    has_grad[in] = 1;
                }
            }
            if (report) {
                report->nodes_visited += 1;
            }
            if (node.scope != 0) {
                scopes_seen.insert(node.scope);
            }
        }
        if (!retain_graph) {
            graph.release(node);
            if (node.op != OpKind::Leaf) {
                grads[i] = Tensor();
            }
        }
    }
    active_report = previous_report;

    if (report) {
        for (auto s : scopes_seen) {
            report->scope_applications[graph.my_scope_names[s]] += 1;
        }
    }

    Gradients out;
    for (const auto& [name, id] : graph.my_params) {
        if (id <= output.id && has_grad[id]) {
            out[name] = std::move(grads[id]);
        } else {
            out[name] = Tensor(param_shapes[name]);
        }
    }
    return out;
}

Gradients backward(Graph& graph, Var output, BackwardReport* report, bool retain_graph) {
    if (output.graph != &graph) {
        throw ContractViolation("backward output belongs to another graph");
    }
    if (!graph.value(output.id).is_scalar()) {
        throw ContractViolation("backward requires a scalar output, got shape " + shape_string(graph.value(output.id).shape()));
    }
    return backward_seeded(graph, output, Tensor(graph.value(output.id).shape(), 1.0), report, retain_graph);
}

Var matmul(Var a, Var b, bool transpose_a, bool transpose_b) {
    Graph& g = graph_of(a, b);
    require_matrix(a.value(), "matmul");
    require_matrix(b.value(), "matmul");
    Tensor out = gemm(a.value(), transpose_a, b.value(), transpose_b);
    return g.record(OpKind::MatMul, { a.id, b.id }, std::move(out),
        [transpose_a, transpose_b](const Graph& graph, std::size_t node, const Tensor& go) {
            const auto& ins = graph.inputs(node);
            const Tensor& A = graph.value(ins[0]);
            const Tensor& B = graph.value(ins[1]);
            std::vector<Tensor> res(2);
            if (graph.requires_grad(ins[0])) {
                res[0] = transpose_a ? gemm(B, transpose_b, go, true) : gemm(go, false, B, !transpose_b);
            }
            if (graph.requires_grad(ins[1])) {
                res[1] = transpose_b ? gemm(go, true, A, transpose_a) : gemm(A, !transpose_a, go, false);
            }
            return res;
        });
}

Var add(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() == y.shape()) {
        Tensor out = x;
        out += y;
        return g.record(OpKind::Add, { a.id, b.id }, std::move(out),
            [](const Graph& graph, std::size_t node, const Tensor& go) {
                const auto& ins = graph.inputs(node);
                std::vector<Tensor> res(2);
                if (graph.requires_grad(ins[0])) {
                    res[0] = go;
                }
                if (graph.requires_grad(ins[1])) {
                    res[1] = go;
                }
                return res;
            });
    }

    require_matrix(x, "add");
    require_matrix(y, "add");
    if (y.rows() != 1 || y.cols() != x.cols()) {
        throw ShapeError("add: cannot combine " + shape_string(x.shape()) + " with " + shape_string(y.shape())
                         + " (only a 1 x n row vector broadcasts)");
    }
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += y[c];
        }
    }
    return g.record(OpKind::Add, { a.id, b.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const auto& ins = graph.inputs(node);
            std::vector<Tensor> res(2);
            if (graph.requires_grad(ins[0])) {
                res[0] = go;
            }
            if (graph.requires_grad(ins[1])) {
                Tensor gb = Tensor::matrix(1, go.cols());
                for (std::size_t r = 0; r < go.rows(); ++r) {
                    auto row = go.row(r);
                    for (std::size_t c = 0; c < row.size(); ++c) {
                        gb[c] += row[c];
                    }
                }
                res[1] = std::move(gb);
            }
            return res;
        });
}

Var mul(Var a, Var b) {
    Graph& g = graph_of(a, b);
    const Tensor& x = a.value();
    const Tensor& y = b.value();
    if (x.shape() != y.shape()) {
        throw ShapeError("mul: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) + " differ");
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * y[i];
    }
    return g.record(OpKind::Mul, { a.id, b.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const auto& ins = graph.inputs(node);
            const Tensor& X = graph.value(ins[0]);
            const Tensor& Y = graph.value(ins[1]);
            std::vector<Tensor> res(2);
            if (graph.requires_grad(ins[0])) {
                res[0] = Tensor(go.shape());
                for (std::size_t i = 0; i < go.size(); ++i) {
                    res[0][i] = go[i] * Y[i];
                }
            }
            if (graph.requires_grad(ins[1])) {
                res[1] = Tensor(go.shape());
                for (std::size_t i = 0; i < go.size(); ++i) {
                    res[1][i] = go[i] * X[i];
                }
            }
            return res;
        });
}

Var scale(Var a, double factor) {
    Graph& g = graph_of(a);
    Tensor out = map_values(a.value(), [factor](double v) { return v * factor; });
    return g.record(OpKind::Scale, { a.id }, std::move(out),
        [factor](const Graph&, std::size_t, const Tensor& go) {
            return std::vector<Tensor>{ map_values(go, [factor](double v) { return v * factor; }) };
        });
}

Var relu(Var a) {
    Graph& g = graph_of(a);
    Tensor out = map_values(a.value(), [](double v) { return v > 0 ? v : 0.0; });
    return g.record(OpKind::Relu, { a.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& X = graph.value(graph.inputs(node)[0]);
            Tensor gi(go.shape());
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] = X[i] > 0 ? go[i] : 0.0;
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var softplus(Var a) {
    Graph& g = graph_of(a);
    Tensor out = map_values(a.value(), stable_softplus);
    return g.record(OpKind::Softplus, { a.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& X = graph.value(graph.inputs(node)[0]);
            Tensor gi(go.shape());
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] = go[i] * sigmoid(X[i]);
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var exp(Var a) {
    Graph& g = graph_of(a);
    Tensor out = map_values(a.value(), [](double v) { return std::exp(v); });
    return g.record(OpKind::Exp, { a.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& Y = graph.value(node);
            Tensor gi(go.shape());
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] = go[i] * Y[i];
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var log(Var a) {
    Graph& g = graph_of(a);
    Tensor out = map_values(a.value(), [](double v) { return std::log(v); });
    return g.record(OpKind::Log, { a.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& X = graph.value(graph.inputs(node)[0]);
            Tensor gi(go.shape());
            for (std::size_t i = 0; i < go.size(); ++i) {
                gi[i] = go[i] / X[i];
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

namespace {

Tensor reduce_sum(const Tensor& x, int axis) {
    if (axis == 0) {
        Tensor out = Tensor::matrix(1, x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
            auto row = x.row(r);
            for (std::size_t c = 0; c < row.size(); ++c) {
                out[c] += row[c];
            }
        }
        return out;
    }
    if (axis == 1) {
        Tensor out = Tensor::matrix(x.rows(), 1);
        for (std::size_t r = 0; r < x.rows(); ++r) {
            double s = 0;
            for (double v : x.row(r)) {
                s += v;
            }
            out[r] = s;
        }
        return out;
    }
    throw ContractViolation("reduction axis must be 0 or 1");
}

Tensor expand_reduced(const Tensor& go, const Shape& shape, int axis, double factor) {
    Tensor gi(shape);
    const std::size_t nr = shape[0];
    const std::size_t nc = shape[1];
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < nc; ++c) {
            gi(r, c) = factor * (axis == 0 ? go[c] : go[r]);
        }
    }
    return gi;
}

Var reduce_all(Var a, OpKind op) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    double s = 0;
    for (double v : x.data()) {
        s += v;
    }
    const double factor = op == OpKind::Mean ? 1.0 / static_cast<double>(x.size()) : 1.0;
    return g.record(op, { a.id }, Tensor::scalar(s * factor),
        [factor](const Graph& graph, std::size_t node, const Tensor& go) {
            const Shape& shape = graph.value(graph.inputs(node)[0]).shape();
            return std::vector<Tensor>{ Tensor(shape, go[0] * factor) };
        });
}

Var reduce_axis(Var a, int axis, OpKind op) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    require_matrix(x, op_name(op));
    Tensor out = reduce_sum(x, axis);
    const std::size_t count = axis == 0 ? x.rows() : x.cols();
    const double factor = op == OpKind::Mean ? 1.0 / static_cast<double>(count) : 1.0;
    if (op == OpKind::Mean) {
        for (auto& v : out.data()) {
            v *= factor;
        }
    }
    return g.record(op, { a.id }, std::move(out),
        [axis, factor](const Graph& graph, std::size_t node, const Tensor& go) {
            const Shape& shape = graph.value(graph.inputs(node)[0]).shape();
            return std::vector<Tensor>{ expand_reduced(go, shape, axis, factor) };
        });
}

}

Var sum(Var a) {
    return reduce_all(a, OpKind::Sum);
}

Var sum(Var a, int axis) {
    return reduce_axis(a, axis, OpKind::Sum);
}

Var mean(Var a) {
    return reduce_all(a, OpKind::Mean);
}

Var mean(Var a, int axis) {
    return reduce_axis(a, axis, OpKind::Mean);
}

Var l2_norm(Var a) {
    Graph& g = graph_of(a);
    double s = 0;
    for (double v : a.value().data()) {
        s += v * v;
    }
    return g.record(OpKind::L2Norm, { a.id }, Tensor::scalar(std::sqrt(s)),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& X = graph.value(graph.inputs(node)[0]);
            const double norm = graph.value(node)[0];
            Tensor gi(X.shape());
            if (norm > 0) {
                const double f = go[0] / norm;
                for (std::size_t i = 0; i < X.size(); ++i) {
                    gi[i] = f * X[i];
                }
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var softmax(Var a) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    require_matrix(x, "softmax");
    Tensor out(x.shape());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        auto src = x.row(r);
        auto dst = out.row(r);
        const double mx = *std::max_element(src.begin(), src.end());
        double total = 0;
        for (std::size_t c = 0; c < src.size(); ++c) {
            dst[c] = std::exp(src[c] - mx);
            total += dst[c];
        }
        for (auto& v : dst) {
            v /= total;
        }
    }
    return g.record(OpKind::Softmax, { a.id }, std::move(out),
        [](const Graph& graph, std::size_t node, const Tensor& go) {
            const Tensor& Y = graph.value(node);
            Tensor gi(Y.shape());
            for (std::size_t r = 0; r < Y.rows(); ++r) {
                auto y = Y.row(r);
                auto gr = go.row(r);
                double dot = 0;
                for (std::size_t c = 0; c < y.size(); ++c) {
                    dot += gr[c] * y[c];
                }
                auto dst = gi.row(r);
                for (std::size_t c = 0; c < y.size(); ++c) {
                    dst[c] = y[c] * (gr[c] - dot);
                }
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var concat(std::span<const Var> parts, int axis) {
    if (parts.empty()) {
        throw ContractViolation("concat of zero tensors");
    }
    if (axis != 0 && axis != 1) {
        throw ContractViolation("concat axis must be 0 or 1");
    }
    Graph& g = graph_of(parts[0]);
    std::vector<std::size_t> ids;
    std::vector<std::size_t> extents;
    std::size_t total = 0;
    const std::size_t fixed = axis == 0 ? parts[0].cols() : parts[0].rows();
    for (const auto& p : parts) {
        graph_of(parts[0], p);
        const Tensor& t = p.value();
        require_matrix(t, "concat");
        const std::size_t other = axis == 0 ? t.cols() : t.rows();
        if (other != fixed) {
            throw ShapeError("concat: part of shape " + shape_string(t.shape()) + " does not align on axis " + std::to_string(1 - axis));
        }
        ids.push_back(p.id);
        const std::size_t e = axis == 0 ? t.rows() : t.cols();
        extents.push_back(e);
        total += e;
    }

    Tensor out = axis == 0 ? Tensor::matrix(total, fixed) : Tensor::matrix(fixed, total);
    std::size_t offset = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
        const Tensor& t = parts[k].value();
        for (std::size_t r = 0; r < t.rows(); ++r) {
            for (std::size_t c = 0; c < t.cols(); ++c) {
                if (axis == 0) {
                    out(offset + r, c) = t(r, c);
                } else {
                    out(r, offset + c) = t(r, c);
                }
            }
        }
        offset += extents[k];
    }

    return g.record(OpKind::Concat, std::move(ids), std::move(out),
        [axis, extents](const Graph& graph, std::size_t node, const Tensor& go) {
            const auto& ins = graph.inputs(node);
            std::vector<Tensor> res(ins.size());
            std::size_t offset = 0;
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (graph.requires_grad(ins[k])) {
                    const Shape& shape = graph.value(ins[k]).shape();
                    Tensor gi(shape);
                    for (std::size_t r = 0; r < shape[0]; ++r) {
                        for (std::size_t c = 0; c < shape[1]; ++c) {
                            gi(r, c) = axis == 0 ? go(offset + r, c) : go(r, offset + c);
                        }
                    }
                    res[k] = std::move(gi);
                }
                offset += extents[k];
            }
            return res;
        });
}

Var slice(Var a, int axis, std::size_t begin, std::size_t end) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    require_matrix(x, "slice");
    if (axis != 0 && axis != 1) {
        throw ContractViolation("slice axis must be 0 or 1");
    }
    const std::size_t extent = axis == 0 ? x.rows() : x.cols();
    if (begin > end || end > extent) {
        throw ShapeError("slice [" + std::to_string(begin) + ", " + std::to_string(end) + ") out of range for "
                         + shape_string(x.shape()) + " on axis " + std::to_string(axis));
    }
    const std::size_t nr = axis == 0 ? end - begin : x.rows();
    const std::size_t nc = axis == 1 ? end - begin : x.cols();
    Tensor out = Tensor::matrix(nr, nc);
    for (std::size_t r = 0; r < nr; ++r) {
        for (std::size_t c = 0; c < nc; ++c) {
            out(r, c) = axis == 0 ? x(begin + r, c) : x(r, begin + c);
        }
    }
    return g.record(OpKind::Slice, { a.id }, std::move(out),
        [axis, begin](const Graph& graph, std::size_t node, const Tensor& go) {
            const Shape& shape = graph.value(graph.inputs(node)[0]).shape();
            Tensor gi(shape);
            for (std::size_t r = 0; r < go.rows(); ++r) {
                for (std::size_t c = 0; c < go.cols(); ++c) {
                    if (axis == 0) {
                        gi(begin + r, c) = go(r, c);
                    } else {
                        gi(r, begin + c) = go(r, c);
                    }
                }
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var embedding_lookup(Var table, std::span<const std::size_t> ids) {
    Graph& g = graph_of(table);
    const Tensor& t = table.value();
    require_matrix(t, "embedding_lookup");
    for (auto id : ids) {
        if (id >= t.rows()) {
            throw ShapeError("embedding_lookup: id " + std::to_string(id) + " outside table of " + std::to_string(t.rows()) + " rows");
        }
    }
    std::vector<std::size_t> rows(ids.begin(), ids.end());
    Tensor out = gather_rows(t, rows);
    return g.record(OpKind::EmbeddingLookup, { table.id }, std::move(out),
        [rows](const Graph& graph, std::size_t node, const Tensor& go) {
            const Shape& shape = graph.value(graph.inputs(node)[0]).shape();
            Tensor gi(shape);
            for (std::size_t i = 0; i < rows.size(); ++i) {
                auto src = go.row(i);
                auto dst = gi.row(rows[i]);
                for (std::size_t c = 0; c < src.size(); ++c) {
                    dst[c] += src[c];
                }
            }
            return std::vector<Tensor>{ std::move(gi) };
        });
}

Var reshape(Var a, std::size_t rows, std::size_t cols) {
    Graph& g = graph_of(a);
    const Tensor& x = a.value();
    if (rows * cols != x.size()) {
        throw ShapeError("reshape of " + shape_string(x.shape()) + " to " + std::to_string(rows) + "x" + std::to_string(cols));
    }
    Tensor out = Tensor::matrix(rows, cols);
    std::copy(x.data().begin(), x.data().end(), out.data().begin());
    return g.record(OpKind::Reshape, { a.id }, std::move(out), [](const Graph& graph, std::size_t node, const Tensor& go) {
        Tensor gi(graph.value(graph.inputs(node)[0]).shape());
        std::copy(go.data().begin(), go.data().end(), gi.data().begin());
        return std::vector<Tensor>{ std::move(gi) };
    });
}

namespace {

std::string checkpoint_input_name(std::size_t k) {
    return "#checkpoint-input-" + std::to_string(k);
}

Var replay(Graph& inner, const GraphFn& fn, const std::vector<const Tensor*>& values, const std::vector<bool>& needs_grad) {
    std::vector<Var> leaves;
    leaves.reserve(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
        leaves.push_back(needs_grad[k] ? inner.param(checkpoint_input_name(k), *values[k]) : inner.constant(*values[k]));
    }
    return fn(inner, leaves);
}

}

Var checkpointed_apply(Graph& graph, GraphFn fn, std::span<const Var> inputs) {
    std::vector<std::size_t> ids;
    std::vector<const Tensor*> values;
    std::vector<bool> needs_grad;
    for (const auto& v : inputs) {
        graph_of(v);
        if (v.graph != &graph) {
            throw ContractViolation("checkpointed_apply input belongs to another graph");
        }
        ids.push_back(v.id);
        values.push_back(&v.value());
        needs_grad.push_back(v.requires_grad());
    }

    Tensor out;
    {
        Graph inner(graph.stats_handle());
        Var result = replay(inner, fn, values, needs_grad);
        if (result.graph != &inner) {
            throw ContractViolation("checkpointed function returned a Var from another graph");
        }
        out = result.value();
    }

    return graph.record(OpKind::Checkpoint, std::move(ids), std::move(out),
        [fn = std::move(fn)](const Graph& g, std::size_t node, const Tensor& go) {
            const auto& ins = g.inputs(node);
            std::vector<const Tensor*> values;
            std::vector<bool> needs_grad;
            for (auto in : ins) {
                values.push_back(&g.value(in));
                needs_grad.push_back(g.requires_grad(in));
            }

            Graph inner(g.stats_handle());
            Var result = replay(inner, fn, values, needs_grad);
            if (!result.value().identical(g.value(node))) {
                throw ContractViolation("checkpointed function is not pure: re-execution of node #" + std::to_string(node)
                                        + " produced a different output");
            }

            Gradients inner_grads = backward_seeded(inner, result, go, active_report, false);
            std::vector<Tensor> res(ins.size());
            for (std::size_t k = 0; k < ins.size(); ++k) {
                if (needs_grad[k]) {
                    res[k] = std::move(inner_grads[checkpoint_input_name(k)]);
                }
            }
            return res;
        });
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x, double eps) {
    if (!(eps > 0)) {
        throw ContractViolation("finite_diff_grad requires eps > 0");
    }
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double original = probe[i];
        probe[i] = original + eps;
        const double up = fn(probe);
        probe[i] = original - eps;
        const double down = fn(probe);
        probe[i] = original;
        grad[i] = (up - down) / (2 * eps);
    }
    return grad;
}

}
