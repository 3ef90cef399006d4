#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mrstyle/tensor.hpp"

namespace mrstyle::nn {

/// Named trainable tensor. Frozen parameters do not track gradients and
/// are skipped by the optimizer.
struct Parameter {
    std::string name;
    Tensor tensor;
    bool frozen = false;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) { tensor.set_requires_grad(true); }

    void set_frozen(bool flag) {
        frozen = flag;
        tensor.set_requires_grad(!flag);
    }
};

using ParameterList = std::vector<Parameter*>;

void set_frozen(const ParameterList& params, bool frozen);
void zero_grad(const ParameterList& params);
std::size_t parameter_count(const ParameterList& params);

/// Kaiming-uniform (ReLU gain): U(-sqrt(6/fan_in), sqrt(6/fan_in)).
Tensor kaiming_uniform(Shape shape, int fan_in, std::mt19937_64& rng);

struct AdamOptions {
    double lr = 5e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam update at step t >= 1; m and v are updated in place.
void adam_update(std::span<double> param, std::span<const double> grad, std::span<double> m, std::span<double> v,
                 const AdamOptions& opts, int t);

class Adam {
public:
    Adam(ParameterList params, AdamOptions opts);

    /// Applies one update from the accumulated gradients.
    void step();
    void zero_grad();

    [[nodiscard]] int steps_taken() const noexcept { return t_; }
    [[nodiscard]] const AdamOptions& options() const noexcept { return opts_; }
    void set_lr(double lr) { opts_.lr = lr; }

private:
    ParameterList params_;
    AdamOptions opts_;
    std::vector<std::vector<double>> m_, v_;
    int t_ = 0;
};

/// Named tensor as stored in an MRSW checkpoint.
struct NamedTensor {
    std::string name;
    std::vector<std::uint32_t> dims;
    std::vector<float> values;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// MRSW layout: "MRSW", u32 version, u32 count, then per tensor u32 name
/// length, name bytes, u32 rank, u32 dims, f32 data. All little-endian.
std::string encode_checkpoint(const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> decode_checkpoint(std::string_view bytes);

void save_checkpoint(const ParameterList& params, const std::filesystem::path& path);
/// Copies every parameter from the file; names and shapes must match.
void load_checkpoint(const ParameterList& params, const std::filesystem::path& path);
std::vector<NamedTensor> snapshot(const ParameterList& params);
void restore(const ParameterList& params, const std::vector<NamedTensor>& tensors);

}  // namespace mrstyle::nn
