#include <gtest/gtest.h>

#include <cmath>

#include "fabseg/verification.hpp"
#include "test_util.hpp"

using namespace fabseg;
using namespace fabseg::verification;
using fabseg::testutil::throws_kind;

TEST(FiniteDifference, Quadratic) {
    const std::vector<double> x = {1.0, 2.0};
    auto g = finite_difference_gradient([](std::span<const double> v) { return v[0] * v[0] + v[1] * v[1]; }, x);
    EXPECT_NEAR(g[0], 2.0, 1e-8);
    EXPECT_NEAR(g[1], 4.0, 1e-8);
}

TEST(FiniteDifference, ConstantHasZeroGradient) {
    const std::vector<double> x = {0.3, -1.0, 5.0};
    for (double v : finite_difference_gradient([](std::span<const double>) { return 7.0; }, x)) EXPECT_EQ(v, 0.0);
}

TEST(FiniteDifference, NonFiniteFails) {
    const std::vector<double> x = {0.0};
    EXPECT_TRUE(throws_kind(ErrorKind::NumericalError,
                            [&] { finite_difference_gradient([](std::span<const double> v) { return std::log(v[0]); }, x); }));
}

TEST(RelativeError, GuardsZero) {
    const std::vector<double> a = {0.0, 0.0}, b = {0.0, 0.0};
    EXPECT_EQ(relative_error(a, b), 0.0);
    const std::vector<double> c = {1.0, 2.0}, d = {1.0, 2.2};
    EXPECT_NEAR(relative_error(c, d), 0.2 / 2.2, 1e-12);
}

TEST(Fixtures, ReferenceRows) {
    bool seen_fabsam = false, seen_deeplab = false, seen_zero_shot = false;
    for (const auto& row : comparison_fixtures()) {
        if (row.region_iou == 60.64 && row.boundary_iou == 37.40) seen_fabsam = row.miou == 49.02;
        if (row.region_iou == 84.30 && row.boundary_iou == 3.25) seen_deeplab = row.miou == 43.78;
        if (row.region_iou == 73.95 && row.boundary_iou == 8.40) seen_zero_shot = row.miou == 41.18;
    }
    EXPECT_TRUE(seen_fabsam);
    EXPECT_TRUE(seen_deeplab);
    EXPECT_TRUE(seen_zero_shot);
    EXPECT_TRUE(check_paper_fixtures().passed());
}

TEST(GradientSuite, Losses) {
    auto r = check_loss_gradients(0);
    EXPECT_TRUE(r.passed(1e-5)) << r.worst_parameter << " " << r.max_rel_error;
    EXPECT_EQ(r.precision, "double");
}

TEST(GradientSuite, PrompterToy) {
    auto r = check_prompter_gradients(0);
    EXPECT_TRUE(r.passed(1e-4)) << r.worst_parameter << " " << r.max_rel_error;
    EXPECT_GT(r.tensors_checked, 20u);
}

TEST(GradientSuite, SamToy) {
    auto r = check_sam_gradients(0);
    EXPECT_TRUE(r.passed(1e-4)) << r.worst_parameter << " " << r.max_rel_error;
    EXPECT_GT(r.tensors_checked, 20u);
}
