#include "fabseg/losses.hpp"

#include <algorithm>
#include <cmath>

#include "fabseg/errors.hpp"

namespace fabseg::losses {

namespace {

void check_pair(std::span<const double> y, std::span<const double> target, const char* op) {
    require(y.size() == target.size(), ErrorKind::ShapeError,
            std::string(op) + ": prediction has " + std::to_string(y.size()) + " values, target " + std::to_string(target.size()));
    require(!y.empty(), ErrorKind::EmptyInput, std::string(op) + ": empty input");
}

void check_finite(double v, const char* op) {
    require(std::isfinite(v), ErrorKind::NumericalError, std::string(op) + ": non-finite loss");
}

}  // namespace

double LossValue::term(std::string_view name) const {
    for (const auto& t : terms)
        if (t.name == name) return t.value;
    fail(ErrorKind::InvalidArgument, "no loss term named " + std::string(name));
}

void PrompterLossWeights::validate() const {
    require(w_m >= 0.0 && w_a >= 0.0, ErrorKind::InvalidArgument, "prompter loss weights must be >= 0");
    require(w_m > 0.0 || w_a > 0.0, ErrorKind::InvalidArgument, "prompter loss weights cannot both be zero");
}

void FinetuneLossWeights::validate() const {
    require(w_d >= 0.0 && w_f >= 0.0, ErrorKind::InvalidArgument, "fine-tune loss weights must be >= 0");
    require(w_d > 0.0 || w_f > 0.0, ErrorKind::InvalidArgument, "fine-tune loss weights cannot both be zero");
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidArgument, "focal alpha must lie in (0,1)");
    require(gamma >= 0.0, ErrorKind::InvalidArgument, "focal gamma must be >= 0");
}

LossValue cross_entropy_loss(std::span<const double> y, std::span<const double> target, double eps) {
    check_pair(y, target, "cross_entropy_loss");
    const double n = static_cast<double>(y.size());
    LossValue out;
    out.grad.resize(y.size());
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool clamped = y[i] < eps || y[i] > 1.0 - eps;
        const double p = std::clamp(y[i], eps, 1.0 - eps);
        const double t = target[i];
        total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
        out.grad[i] = clamped ? 0.0 : (-t / p + (1.0 - t) / (1.0 - p)) / n;
    }
    out.value = total / n;
    check_finite(out.value, "cross_entropy_loss");
    out.terms = {{"ce", out.value}};
    return out;
}

PrompterLoss prompter_loss(const Tensor& main_logits, const Tensor& aux_logits, std::span<const double> target,
                           const PrompterLossWeights& w) {
    w.validate();
    auto head = [&](const Tensor& logits, std::vector<double>& grad) {
        require(logits.rank() == 4 && logits.dim(1) == 2, ErrorKind::ShapeError,
                "prompter_loss: logits must be [N,2,H,W], got " + shape_str(logits.shape()));
        const auto n = logits.dim(0), hw = logits.dim(2) * logits.dim(3);
        require(static_cast<std::int64_t>(target.size()) == n * hw, ErrorKind::ShapeError,
                "prompter_loss: target size does not match logits");
        std::vector<double> y(static_cast<std::size_t>(n * hw));
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t i = 0; i < hw; ++i) {
                const double d = logits[(s * 2 + 1) * hw + i] - logits[(s * 2) * hw + i];
                y[static_cast<std::size_t>(s * hw + i)] = 1.0 / (1.0 + std::exp(-d));
            }
        LossValue ce = cross_entropy_loss(y, target);
        grad.assign(static_cast<std::size_t>(logits.numel()), 0.0);
        for (std::int64_t s = 0; s < n; ++s)
            for (std::int64_t i = 0; i < hw; ++i) {
                const auto k = static_cast<std::size_t>(s * hw + i);
                const double g = ce.grad[k] * y[k] * (1.0 - y[k]);
                grad[static_cast<std::size_t>((s * 2 + 1) * hw + i)] = g;
                grad[static_cast<std::size_t>((s * 2) * hw + i)] = -g;
            }
        return ce.value;
    };

    PrompterLoss out;
    const double main = head(main_logits, out.grad_main);
    double aux = 0.0;
    if (!aux_logits.empty()) {
        aux = head(aux_logits, out.grad_aux);
        for (auto& g : out.grad_aux) g *= w.w_a;
    } else {
        require(w.w_a == 0.0, ErrorKind::InvalidArgument, "prompter_loss: aux logits required when w_a > 0");
    }
    for (auto& g : out.grad_main) g *= w.w_m;
    out.loss.value = w.w_m * main + w.w_a * aux;
    out.loss.terms = {{"main", main}, {"aux", aux}};
    out.loss.grad = out.grad_main;
    return out;
}

LossValue dice_loss(std::span<const double> y, std::span<const double> target, double smooth) {
    check_pair(y, target, "dice_loss");
    double inter = 0.0, sum_t = 0.0, sum_y = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        inter += target[i] * y[i];
        sum_t += target[i];
        sum_y += y[i];
    }
    const double num = 2.0 * inter + smooth;
    const double den = sum_t + sum_y + smooth;
    LossValue out;
    out.value = 1.0 - num / den;
    check_finite(out.value, "dice_loss");
    out.terms = {{"dice", out.value}};
    out.grad.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out.grad[i] = -(2.0 * target[i] * den - num) / (den * den);
    return out;
}

LossValue focal_loss(std::span<const double> y, std::span<const double> target, double alpha, double gamma, double eps) {
    check_pair(y, target, "focal_loss");
    require(alpha > 0.0 && alpha < 1.0, ErrorKind::InvalidArgument, "focal_loss: alpha must lie in (0,1)");
    require(gamma >= 0.0, ErrorKind::InvalidArgument, "focal_loss: gamma must be >= 0");
    const double n = static_cast<double>(y.size());
    // d/dp p^g, with the g == 0 case kept exactly zero
    auto dpow = [gamma](double p) { return gamma == 0.0 ? 0.0 : gamma * std::pow(p, gamma - 1.0); };
    LossValue out;
    out.grad.resize(y.size());
    double total = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const bool clamped = y[i] < eps || y[i] > 1.0 - eps;
        const double p = std::clamp(y[i], eps, 1.0 - eps);
        double g;
        if (target[i] >= 0.5) {
            const double q = 1.0 - p;
            total += -alpha * std::pow(q, gamma) * std::log(p);
            g = alpha * (dpow(q) * std::log(p) - std::pow(q, gamma) / p);
        } else {
            total += -(1.0 - alpha) * std::pow(p, gamma) * std::log(1.0 - p);
            g = -(1.0 - alpha) * (dpow(p) * std::log(1.0 - p) - std::pow(p, gamma) / (1.0 - p));
        }
        out.grad[i] = clamped ? 0.0 : g / n;
    }
    out.value = total / n;
    check_finite(out.value, "focal_loss");
    out.terms = {{"focal", out.value}};
    return out;
}

LossValue finetune_loss(std::span<const double> y, std::span<const double> target, const FinetuneLossWeights& w) {
    w.validate();
    const LossValue dice = dice_loss(y, target);
    const LossValue focal = focal_loss(y, target, w.alpha, w.gamma);
    LossValue out;
    out.value = w.w_d * dice.value + w.w_f * focal.value;
    out.terms = {{"dice", dice.value}, {"focal", focal.value}};
    out.grad.resize(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) out.grad[i] = w.w_d * dice.grad[i] + w.w_f * focal.grad[i];
    return out;
}

}  // namespace fabseg::losses
