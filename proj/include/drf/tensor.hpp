#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace drf {

// Dense n-dimensional array of 64-bit floats, flat row-major storage.
struct TensorD {
    std::vector<std::size_t> shape;
    std::vector<double> data;

    TensorD() = default;
    static TensorD zeros(std::vector<std::size_t> shape);

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    std::size_t rows() const { return shape.at(0); }
    std::size_t cols() const { return shape.at(1); }

    // 2-D access
    double& at(std::size_t i, std::size_t j) { return data[i * shape[1] + j]; }
    double at(std::size_t i, std::size_t j) const { return data[i * shape[1] + j]; }
    // flat access
    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool all_finite() const;
};

struct Param {
    TensorD value;
    TensorD grad;
    TensorD m;  // Adam first moment
    TensorD v;  // Adam second moment
};

// Named collection of trainable parameters with gradient slots.
// std::map keeps iteration order deterministic.
struct ParamStore {
    std::map<std::string, Param> params;
    std::int64_t adam_steps = 0;

    Param& add(const std::string& name, std::vector<std::size_t> shape);
    bool has(const std::string& name) const { return params.count(name) != 0; }
    const TensorD& value(const std::string& name) const;
    TensorD& value(const std::string& name);
    TensorD& grad(const std::string& name);
    void zero_grad();
    std::size_t total_elements() const;
};

// Standalone gradient buffer mirroring a ParamStore's shapes; used so that
// batch kernels can accumulate into per-block buffers before reducing into
// the store's own grad slots in a fixed order.
using GradMap = std::map<std::string, TensorD>;

GradMap grads_like(const ParamStore& store);
TensorD& grad_slot(GradMap& grads, const std::string& name);
void add_grads(GradMap& dst, const GradMap& src);             // dst += src
void accumulate_into_store(ParamStore& store, const GradMap& grads);

// Standard Adam with bias correction; no-op on parameters whose grad is zero
// and whose moments are still zero.
void adam_step(ParamStore& store, double lr, double beta1, double beta2, double eps_adam);

}  // namespace drf
