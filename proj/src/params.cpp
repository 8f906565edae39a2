#include "scdd/params.hpp"

#include "scdd/error.hpp"

#include <cmath>
#include <cstring>

namespace scdd {

void ParamSet::add(const std::string& name, Tensor value) {
    if (my_values.count(name)) {
        throw ContractViolation("parameter '" + name + "' already exists");
    }
    my_values.emplace(name, std::move(value));
}

const Tensor& ParamSet::at(const std::string& name) const {
    auto it = my_values.find(name);
    if (it == my_values.end()) {
        throw ContractViolation("unknown parameter '" + name + "'");
    }
    return it->second;
}

Tensor& ParamSet::at(const std::string& name) {
    auto it = my_values.find(name);
    if (it == my_values.end()) {
        throw ContractViolation("unknown parameter '" + name + "'");
    }
    return it->second;
}

std::size_t ParamSet::count() const {
    std::size_t n = 0;
    for (const auto& [name, t] : my_values) {
        n += t.size();
    }
    return n;
}

std::string ParamSet::group_of(const std::string& name) {
    return name.substr(0, name.find('.'));
}

void ParamSet::set_frozen(const std::string& group, bool frozen) {
    if (frozen) {
        my_frozen.insert(group);
    } else {
        my_frozen.erase(group);
    }
}

bool ParamSet::is_frozen(const std::string& name) const {
    return my_frozen.count(group_of(name)) > 0;
}

void ParamSet::freeze_all() {
    for (const auto& [name, t] : my_values) {
        my_frozen.insert(group_of(name));
    }
}

Var ParamSet::bind(Graph& graph, const std::string& name) const {
    return is_frozen(name) ? graph.constant(at(name)) : graph.param(name, at(name));
}

Var ParamSet::bind_constant(Graph& graph, const std::string& name) const {
    return graph.constant(at(name));
}

std::uint64_t ParamSet::hash() const {
    std::uint64_t h = fnv1a64("");
    for (const auto& [name, t] : my_values) {
        h = fnv1a64(name, h);
        for (auto d : t.shape()) {
            std::uint64_t v = d;
            h = fnv1a64(std::string_view(reinterpret_cast<const char*>(&v), sizeof(v)), h);
        }
        auto data = t.data();
        h = fnv1a64(std::string_view(reinterpret_cast<const char*>(data.data()), data.size() * sizeof(double)), h);
    }
    return h;
}

void ParamSet::merge(const ParamSet& other) {
    for (const auto& [name, t] : other.my_values) {
        add(name, t);
    }
    for (const auto& g : other.my_frozen) {
        my_frozen.insert(g);
    }
}

ParamSet ParamSet::subset(const std::string& group) const {
    ParamSet out;
    for (const auto& [name, t] : my_values) {
        if (group_of(name) == group) {
            out.add(name, t);
        }
    }
    if (my_frozen.count(group)) {
        out.set_frozen(group);
    }
    return out;
}

void Sgd::step(ParamSet& params, const Gradients& grads) {
    for (const auto& [name, g] : grads) {
        if (!params.contains(name) || params.is_frozen(name)) {
            continue;
        }
        step(params.at(name), g, name);
    }
}

void Sgd::step(Tensor& x, const Tensor& grad, const std::string& key) {
    if (x.shape() != grad.shape()) {
        throw ShapeError("gradient " + shape_string(grad.shape()) + " does not match parameter " + shape_string(x.shape()));
    }
    if (my_momentum == 0) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] -= my_lr * grad[i];
        }
        return;
    }
    auto& vel = my_velocity[key];
    if (vel.shape() != x.shape()) {
        vel = Tensor(x.shape());
    }
    for (std::size_t i = 0; i < x.size(); ++i) {
        vel[i] = my_momentum * vel[i] + grad[i];
        x[i] -= my_lr * vel[i];
    }
}

void Adam::step(ParamSet& params, const Gradients& grads) {
    ++my_t;
    const double c1 = 1 - std::pow(my_beta1, static_cast<double>(my_t));
    const double c2 = 1 - std::pow(my_beta2, static_cast<double>(my_t));
    for (const auto& [name, g] : grads) {
        if (!params.contains(name) || params.is_frozen(name)) {
            continue;
        }
        Tensor& x = params.at(name);
        auto& m = my_m[name];
        auto& v = my_v[name];
        if (m.shape() != x.shape()) {
            m = Tensor(x.shape());
            v = Tensor(x.shape());
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            m[i] = my_beta1 * m[i] + (1 - my_beta1) * g[i];
            v[i] = my_beta2 * v[i] + (1 - my_beta2) * g[i] * g[i];
            x[i] -= my_lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + my_eps);
        }
    }
}

void init_linear(ParamSet& params, const std::string& name, std::size_t in, std::size_t out, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Tensor w = Tensor::matrix(out, in);
    for (auto& v : w.data()) {
        v = (2 * rng.uniform() - 1) * bound;
    }
    Tensor b = Tensor::matrix(1, out);
    for (auto& v : b.data()) {
        v = (2 * rng.uniform() - 1) * bound;
    }
    params.add(name + ".weight", std::move(w));
    params.add(name + ".bias", std::move(b));
}

Var linear(Graph& graph, const ParamSet& params, const std::string& name, Var x) {
    Var w = params.bind(graph, name + ".weight");
    Var b = params.bind(graph, name + ".bias");
    return add(matmul(x, w, false, true), b);
}

}
