#include "drf/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace drf {

TensorD TensorD::zeros(std::vector<std::size_t> shape) {
    TensorD t;
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    t.shape = std::move(shape);
    t.data.assign(n, 0.0);
    return t;
}

bool TensorD::all_finite() const {
    for (double v : data) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

Param& ParamStore::add(const std::string& name, std::vector<std::size_t> shape) {
    if (has(name)) throw std::invalid_argument("ParamStore::add: duplicate name " + name);
    Param p;
    p.value = TensorD::zeros(shape);
    p.grad = TensorD::zeros(shape);
    p.m = TensorD::zeros(shape);
    p.v = TensorD::zeros(shape);
    return params.emplace(name, std::move(p)).first->second;
}

const TensorD& ParamStore::value(const std::string& name) const {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second.value;
}

TensorD& ParamStore::value(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second.value;
}

TensorD& ParamStore::grad(const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("ParamStore: unknown parameter " + name);
    return it->second.grad;
}

void ParamStore::zero_grad() {
    for (auto& [name, p] : params) {
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
    }
}

std::size_t ParamStore::total_elements() const {
    std::size_t n = 0;
    for (const auto& [name, p] : params) n += p.value.numel();
    return n;
}

GradMap grads_like(const ParamStore& store) {
    GradMap g;
    for (const auto& [name, p] : store.params) {
        g.emplace(name, TensorD::zeros(p.value.shape));
    }
    return g;
}

TensorD& grad_slot(GradMap& grads, const std::string& name) {
    auto it = grads.find(name);
    if (it == grads.end()) throw std::invalid_argument("GradMap: unknown parameter " + name);
    return it->second;
}

void add_grads(GradMap& dst, const GradMap& src) {
    for (auto& [name, t] : dst) {
        const TensorD& s = src.at(name);
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] += s.data[i];
    }
}

void accumulate_into_store(ParamStore& store, const GradMap& grads) {
    for (auto& [name, p] : store.params) {
        const TensorD& g = grads.at(name);
        for (std::size_t i = 0; i < g.data.size(); ++i) p.grad.data[i] += g.data[i];
    }
}

void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps_adam) {
    store.adam_steps += 1;
    const double t = static_cast<double>(store.adam_steps);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
    for (auto& [name, p] : store.params) {
        for (std::size_t i = 0; i < p.value.data.size(); ++i) {
            const double g = p.grad.data[i];
            p.m.data[i] = beta1 * p.m.data[i] + (1.0 - beta1) * g;
            p.v.data[i] = beta2 * p.v.data[i] + (1.0 - beta2) * g * g;
            const double mhat = p.m.data[i] / bc1;
            const double vhat = p.v.data[i] / bc2;
            p.value.data[i] -= lr * mhat / (std::sqrt(vhat) + eps_adam);
        }
    }
}

}  // namespace drf
