#pragma once

#include <functional>
#include <map>
#include <string>
#include <string_view>

#include "fabseg/autograd.hpp"
#include "fabseg/random.hpp"
#include "fabseg/tensor.hpp"

namespace fabseg {

/// Named parameter arrays, ordered by name so iteration (and therefore
/// serialization and optimizer updates) is deterministic.
using ParamStore = std::map<std::string, Tensor>;
using GradStore = std::map<std::string, Tensor>;

bool starts_with(std::string_view s, std::string_view prefix);

/// Non-learnable state kept alongside parameters (normalization running
/// statistics, fixed random projections).
bool is_buffer(std::string_view name);

/// Hands out autograd leaves for named parameters during one forward pass.
/// Leaves are cached, so every use of a parameter within the pass shares one
/// gradient accumulator.
class ParamBinder {
public:
    using Predicate = std::function<bool(const std::string&)>;

    /// Read-only view; buffers written during a training-mode forward go to
    /// scratch copies and the store is left untouched.
    explicit ParamBinder(const ParamStore& store, Predicate trainable = {});
    /// Writable view; running statistics are updated in place.
    explicit ParamBinder(ParamStore& store, Predicate trainable = {});

    ag::Var get(const std::string& name);
    Tensor* buffer(const std::string& name);
    bool has(const std::string& name) const { return store_->count(name) > 0; }

    /// Gradients of every trainable parameter touched so far.
    GradStore grads() const;

private:
    const ParamStore* store_;
    ParamStore* writable_ = nullptr;
    Predicate trainable_;
    std::map<std::string, ag::Var> leaves_;
    std::map<std::string, Tensor> scratch_;
};

/// Initialization helpers writing into a ParamStore.
class ParamInit {
public:
    ParamInit(ParamStore& store, Rng& rng) : store_(store), rng_(rng) {}

    /// He-normal conv weight [cout, cin_per_group, k, k].
    void conv(const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k, bool bias);
    /// Transposed conv weight [cin, cout, k, k].
    void conv_transpose(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, bool bias);
    /// Linear weight [out, in] with N(0, 1/in); zero bias.
    void linear(const std::string& name, std::int64_t out, std::int64_t in, bool bias);
    /// Affine normalization: weight 1, bias 0.
    void norm(const std::string& name, std::int64_t c);
    /// Batch norm: affine plus running_mean 0 / running_var 1.
    void batch_norm(const std::string& name, std::int64_t c);
    void normal(const std::string& name, Shape shape, double stddev);

private:
    ParamStore& store_;
    Rng& rng_;
};

}  // namespace fabseg
