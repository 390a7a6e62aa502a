#include "fabseg/params.hpp"

#include <cmath>

#include "fabseg/errors.hpp"

namespace fabseg {

bool starts_with(std::string_view s, std::string_view prefix) { return s.substr(0, prefix.size()) == prefix; }

bool is_buffer(std::string_view name) {
    auto ends_with = [name](std::string_view suffix) {
        return name.size() >= suffix.size() && name.substr(name.size() - suffix.size()) == suffix;
    };
    return ends_with(".running_mean") || ends_with(".running_var") || ends_with(".pe_gaussian");
}

ParamBinder::ParamBinder(const ParamStore& store, Predicate trainable) : store_(&store), trainable_(std::move(trainable)) {}

ParamBinder::ParamBinder(ParamStore& store, Predicate trainable)
    : store_(&store), writable_(&store), trainable_(std::move(trainable)) {}

ag::Var ParamBinder::get(const std::string& name) {
    if (auto it = leaves_.find(name); it != leaves_.end()) return it->second;
    auto it = store_->find(name);
    require(it != store_->end(), ErrorKind::SchemaError, "missing parameter " + name);
    require(it->second.all_finite(), ErrorKind::NumericalError, "non-finite values in parameter " + name);
    const bool train = trainable_ && !is_buffer(name) && trainable_(name);
    auto v = ag::leaf(it->second, train);
    leaves_.emplace(name, v);
    return v;
}

Tensor* ParamBinder::buffer(const std::string& name) {
    if (writable_) {
        auto it = writable_->find(name);
        require(it != writable_->end(), ErrorKind::SchemaError, "missing buffer " + name);
        return &it->second;
    }
    if (auto it = scratch_.find(name); it != scratch_.end()) return &it->second;
    auto it = store_->find(name);
    require(it != store_->end(), ErrorKind::SchemaError, "missing buffer " + name);
    return &scratch_.emplace(name, it->second).first->second;
}

GradStore ParamBinder::grads() const {
    GradStore out;
    for (const auto& [name, v] : leaves_)
        if (v.requires_grad()) out[name] = v.grad().empty() ? Tensor::zeros_like(v.value()) : v.grad();
    return out;
}

void ParamInit::conv(const std::string& name, std::int64_t cout, std::int64_t cin, std::int64_t k, bool bias) {
    normal(name + ".weight", {cout, cin, k, k}, std::sqrt(2.0 / static_cast<double>(cin * k * k)));
    if (bias) store_[name + ".bias"] = Tensor({cout});
}

void ParamInit::conv_transpose(const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k, bool bias) {
    normal(name + ".weight", {cin, cout, k, k}, std::sqrt(1.0 / static_cast<double>(cin)));
    if (bias) store_[name + ".bias"] = Tensor({cout});
}

void ParamInit::linear(const std::string& name, std::int64_t out, std::int64_t in, bool bias) {
    normal(name + ".weight", {out, in}, std::sqrt(1.0 / static_cast<double>(in)));
    if (bias) store_[name + ".bias"] = Tensor({out});
}

void ParamInit::norm(const std::string& name, std::int64_t c) {
    store_[name + ".weight"] = Tensor({c}, 1.0);
    store_[name + ".bias"] = Tensor({c});
}

void ParamInit::batch_norm(const std::string& name, std::int64_t c) {
    norm(name, c);
    store_[name + ".running_mean"] = Tensor({c});
    store_[name + ".running_var"] = Tensor({c}, 1.0);
}

void ParamInit::normal(const std::string& name, Shape shape, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.values()) v = stddev * rng_.normal();
    store_[name] = std::move(t);
}

}  // namespace fabseg
