#include "fabseg/optim.hpp"

#include <cmath>

#include "fabseg/errors.hpp"

namespace fabseg {

double poly_lr(std::int64_t step, std::int64_t max_steps, double lr0, double power) {
    require(max_steps > 0, ErrorKind::InvalidArgument, "poly_lr: max_steps must be > 0");
    require(step >= 0 && step <= max_steps, ErrorKind::InvalidArgument, "poly_lr: step outside [0, max_steps]");
    return lr0 * std::pow(1.0 - static_cast<double>(step) / static_cast<double>(max_steps), power);
}

void Sgd::step(ParamStore& params, const GradStore& grads, double lr) {
    for (const auto& [name, g] : grads) {
        auto& p = params.at(name);
        auto [it, fresh] = velocity_.try_emplace(name, Tensor::zeros_like(p));
        auto& v = it->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i] + weight_decay_ * p[i];
            v[i] = momentum_ * v[i] + gi;
            p[i] -= lr * v[i];
        }
    }
}

void Adam::step(ParamStore& params, const GradStore& grads, double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        auto& p = params.at(name);
        auto& m = m_.try_emplace(name, Tensor::zeros_like(p)).first->second;
        auto& v = v_.try_emplace(name, Tensor::zeros_like(p)).first->second;
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double gi = g[i] + weight_decay_ * p[i];
            m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
            v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
            p[i] -= lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
    }
}

}  // namespace fabseg
