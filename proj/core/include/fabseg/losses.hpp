#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fabseg/tensor.hpp"

// Training objectives. Every loss returns its value together with the
// analytic gradient with respect to its prediction input, so callers can
// inject it into an autograd graph and tests can check it numerically.
namespace fabseg::losses {

/// Probabilities are clamped to [eps, 1 - eps] before taking logs.
inline constexpr double kProbEps = 1e-7;
/// Added to both numerator and denominator of the soft Dice ratio.
inline constexpr double kDiceSmooth = 1e-10;

struct LossTerm {
    std::string name;
    double value = 0.0;
};

struct LossValue {
    double value = 0.0;
    std::vector<LossTerm> terms;
    std::vector<double> grad;  // d value / d prediction, same length as the prediction

    double term(std::string_view name) const;
};

struct PrompterLossWeights {
    double w_m = 1.0;
    double w_a = 0.4;
    void validate() const;
};

struct FinetuneLossWeights {
    double w_d = 1.0;
    double w_f = 1.0;
    double alpha = 0.25;
    double gamma = 2.0;
    void validate() const;
};

/// Mean binary cross-entropy between probabilities y and binary targets.
LossValue cross_entropy_loss(std::span<const double> y, std::span<const double> target, double eps = kProbEps);

struct PrompterLoss {
    LossValue loss;                // terms: "main", "aux"
    std::vector<double> grad_main; // d loss / d main_logits
    std::vector<double> grad_aux;  // d loss / d aux_logits (empty without aux)
};

/// Weighted main + auxiliary cross-entropy on [N, 2, H, W] logits; channel 1
/// is farmland, y is its two-class softmax probability. `aux_logits` may be
/// empty when w_a == 0. `target` holds N*H*W binary labels.
PrompterLoss prompter_loss(const Tensor& main_logits, const Tensor& aux_logits, std::span<const double> target,
                           const PrompterLossWeights& w);

LossValue dice_loss(std::span<const double> y, std::span<const double> target, double smooth = kDiceSmooth);
LossValue focal_loss(std::span<const double> y, std::span<const double> target, double alpha, double gamma,
                     double eps = kProbEps);
/// w_d * dice + w_f * focal; terms: "dice", "focal".
LossValue finetune_loss(std::span<const double> y, std::span<const double> target, const FinetuneLossWeights& w);

}  // namespace fabseg::losses
