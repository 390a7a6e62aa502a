#pragma once

#include <cstdint>

#include "fabseg/params.hpp"

namespace fabseg {

/// lr0 * (1 - step / max_steps)^power.
double poly_lr(std::int64_t step, std::int64_t max_steps, double lr0, double power = 0.9);

/// SGD with classical momentum and L2 weight decay folded into the gradient.
class Sgd {
public:
    Sgd(double momentum, double weight_decay) : momentum_(momentum), weight_decay_(weight_decay) {}
    void step(ParamStore& params, const GradStore& grads, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::map<std::string, Tensor> velocity_;
};

/// Adam with L2 weight decay folded into the gradient.
class Adam {
public:
    Adam(double beta1, double beta2, double eps, double weight_decay)
        : beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {}
    void step(ParamStore& params, const GradStore& grads, double lr);

private:
    double beta1_, beta2_, eps_, weight_decay_;
    std::int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

}  // namespace fabseg
