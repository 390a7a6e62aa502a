#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "fabseg/prompter_net.hpp"
#include "fabseg/sam_block.hpp"

// Numerical oracles shared by the test suites and the `verify` command.
namespace fabseg::verification {

using ScalarFn = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
/// Throws NumericalError when f is not finite at a probe.
std::vector<double> finite_difference_gradient(const ScalarFn& f, std::span<const double> x, double step = 1e-5);

/// Central differences over a subset of coordinates only.
std::vector<double> finite_difference_gradient(const ScalarFn& f, std::span<const double> x,
                                               const std::vector<std::size_t>& coords, double step = 1e-5);

/// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|, floor): the error is
/// measured against the scale of the whole gradient, so coordinates whose
/// true gradient is ~0 do not amplify finite-difference round-off.
double relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor = 1e-12);

/// Denominator floor for network checks. Central differences through a deep
/// forward pass carry round-off near 1e-9 * max(1, |f|) at step 1e-5, so
/// gradient components below 1e-5 * max(1, |f|) (typically ones that are
/// zero by symmetry, e.g. key biases under softmax) are compared in absolute
/// terms against that floor.
double network_error_floor(double f_value);

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::string worst_parameter;
    double step = 1e-5;
    std::string precision = "double";
    std::size_t tensors_checked = 0;
    std::size_t coordinates_checked = 0;
    std::size_t kinks_skipped = 0;  // probes straddling a ReLU kink, replaced by other coordinates

    bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

/// Gradient checks of each loss with respect to its prediction input.
GradCheckReport check_loss_gradients(std::uint64_t seed = 0, double step = 1e-5);

/// Small networks used by the oracle runs.
PrompterConfig toy_prompter_config();
SamConfig toy_sam_config();

/// Input and parameter gradients of a random projection of the Prompter's
/// training-mode outputs (main and auxiliary heads).
GradCheckReport check_prompter_gradients(std::uint64_t seed = 0, std::size_t coords_per_tensor = 6, double step = 1e-5);

/// Gradients of a random projection of F_I with respect to the image and of
/// decoder logits with respect to F_mp, F_I, and every prompt-encoder and
/// decoder parameter.
GradCheckReport check_sam_gradients(std::uint64_t seed = 0, std::size_t coords_per_tensor = 6, double step = 1e-5);

struct FixtureRow {
    std::string dataset;
    std::string method;
    double region_iou;    // percent, as printed
    double boundary_iou;  // percent, as printed
    double miou;          // percent, as printed
};

/// Per-class IoUs and composites of the published comparison table.
const std::vector<FixtureRow>& comparison_fixtures();

struct FixtureReport {
    std::size_t rows_checked = 0;
    std::vector<std::string> mismatches;
    bool passed() const { return mismatches.empty() && rows_checked > 0; }
};

/// Recomputes every composite from its per-class IoUs; a row passes when the
/// 2-decimal rounding matches the printed value within 0.005.
FixtureReport check_paper_fixtures();

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

/// Full oracle suite behind `fabseg verify`.
std::vector<CheckResult> run_oracle_suite(std::uint64_t seed = 0);

}  // namespace fabseg::verification
