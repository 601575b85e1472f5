#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cd/common.hpp"
#include "cd/losses.hpp"

using namespace cd;

TEST_CASE("bce closed-form cases") {
    auto label = (torch::rand({16, 16}) > 0.5).to(torch::kFloat32);

    // perfect prediction bottoms out at the clamp
    CHECK(bce_loss(label.clone(), label).item<double>() ==
          doctest::Approx(1e-7).epsilon(0.05));

    // uniform 0.5 prediction costs ln 2 regardless of the label
    auto half = torch::full({16, 16}, 0.5);
    CHECK(bce_loss(half, label).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-6));
    CHECK(bce_loss(half, torch::zeros({16, 16})).item<double>() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-6));

    // single pixel, label 1, prediction 0.25
    auto one = torch::ones({1});
    auto quarter = torch::full({1}, 0.25);
    CHECK(bce_loss(quarter, one).item<double>() ==
          doctest::Approx(-std::log(0.25)).epsilon(1e-6));

    CHECK_THROWS_AS(bce_loss(torch::rand({4, 4}), torch::rand({8, 8})), ShapeError);
}

TEST_CASE("dice closed-form cases") {
    auto ones = torch::ones({2, 2});
    CHECK(dice_loss(ones, ones, 1.0).item<double>() == doctest::Approx(0.0).epsilon(1e-7));

    auto zeros = torch::zeros({2, 2});
    CHECK(dice_loss(zeros, zeros, 1.0).item<double>() == 0.0);  // sigma rescues 0/0

    // label (1,1,0,0), pred (1,0,0,0), sigma 1 -> 1 - 3/4
    auto label = torch::tensor({1.0f, 1.0f, 0.0f, 0.0f});
    auto pred = torch::tensor({1.0f, 0.0f, 0.0f, 0.0f});
    CHECK(dice_loss(pred, label, 1.0).item<double>() == doctest::Approx(0.25).epsilon(1e-7));

    CHECK_THROWS_AS(dice_loss(pred, label, 0.0), ParameterError);
    CHECK_THROWS_AS(dice_loss(torch::rand({4}), torch::rand({5})), ShapeError);
}

TEST_CASE("dice stays within [0,1) and bce non-negative") {
    torch::manual_seed(0);
    for (int i = 0; i < 20; ++i) {
        auto pred = torch::rand({8, 8});
        auto label = (torch::rand({8, 8}) > 0.5).to(torch::kFloat32);
        auto d = dice_loss(pred, label).item<double>();
        CHECK(d >= 0.0);
        CHECK(d < 1.0);
        CHECK(bce_loss(pred, label).item<double>() >= 0.0);
    }
}

namespace {

// central finite differences on random 8x8 maps in double precision
void check_grad(const std::function<torch::Tensor(const torch::Tensor&)>& f,
                const torch::Tensor& pred0, double tol) {
    auto pred = pred0.clone().set_requires_grad(true);
    auto loss = f(pred);
    loss.backward();
    auto grad = pred.grad();
    REQUIRE(grad.defined());

    torch::NoGradGuard none;
    const double h = 1e-6;
    auto flat = pred.flatten();
    for (int idx : {0, 13, 37, 63}) {
        const double orig = flat[idx].item<double>();
        flat[idx] = orig + h;
        const double up = f(pred).item<double>();
        flat[idx] = orig - h;
        const double down = f(pred).item<double>();
        flat[idx] = orig;
        const double fd = (up - down) / (2 * h);
        const double analytic = grad.flatten()[idx].item<double>();
        const double denom = std::max({std::abs(fd), std::abs(analytic), 1e-10});
        CHECK(std::abs(fd - analytic) / denom < tol);
    }
}

}  // namespace

TEST_CASE("bce and dice gradients match finite differences") {
    torch::manual_seed(1);
    auto label = (torch::rand({8, 8}, torch::kFloat64) > 0.5).to(torch::kFloat64);
    auto pred = torch::rand({8, 8}, torch::kFloat64) * 0.9 + 0.05;

    check_grad([&](const torch::Tensor& p) { return bce_loss(p, label); }, pred, 1e-4);
    check_grad([&](const torch::Tensor& p) { return dice_loss(p, label, 1.0); }, pred, 1e-4);
}

TEST_CASE("total loss composition") {
    torch::manual_seed(2);
    auto label = (torch::rand({8, 8}) > 0.5).to(torch::kFloat32);
    std::vector<torch::Tensor> perfect{label.clone(), label.clone(), label.clone()};

    auto [t0, r0] = total_loss(perfect, label.clone(), label);
    CHECK(t0.item<double>() <= 1e-6);
    CHECK(r0.per_head.size() == 4);

    // identical heads with (bce, dice) = (ln 2, 0.5) -> 0.6931 + 0.5*0.5 = 0.9431
    auto half = torch::full({8, 8}, 0.5);
    auto all_ones = torch::ones({8, 8});
    std::vector<torch::Tensor> halves{half, half, half};
    auto [t1, r1] = total_loss(halves, half, all_ones, 0.5);
    const double dice_half = dice_loss(half, all_ones).item<double>();
    CHECK(t1.item<double>() ==
          doctest::Approx(std::log(2.0) + 0.5 * dice_half).epsilon(1e-6));

    // lambda = 0 degenerates to the mean BCE
    auto preds = std::vector<torch::Tensor>{torch::rand({8, 8}), torch::rand({8, 8}),
                                            torch::rand({8, 8})};
    auto ccr = torch::rand({8, 8});
    auto [t2, r2] = total_loss(preds, ccr, label, 0.0);
    double mean_bce = 0;
    for (const auto& h : r2.per_head) mean_bce += h.bce;
    CHECK(t2.item<double>() == doctest::Approx(mean_bce / 4).epsilon(1e-9));

    // invariant to head ordering when heads coincide; equals per-head loss
    auto p = torch::rand({8, 8});
    auto [t3, r3] = total_loss({p, p, p}, p, label, 0.5);
    auto single = bce_loss(p, label) + 0.5 * dice_loss(p, label);
    CHECK(t3.item<double>() == doctest::Approx(single.item<double>()).epsilon(1e-9));

    // dropping the CCR head averages over three
    auto [t4, r4] = total_loss({p, p, p}, std::nullopt, label, 0.5);
    CHECK(r4.per_head.size() == 3);
    CHECK(t4.item<double>() == doctest::Approx(single.item<double>()).epsilon(1e-9));

    CHECK_THROWS_AS(total_loss({p, p}, std::nullopt, label), ArityError);
}

TEST_CASE("loss report log line carries per-head breakdown") {
    auto label = torch::ones({4, 4});
    auto p = torch::full({4, 4}, 0.5);
    auto [t, r] = total_loss({p, p, p}, p, label);
    auto line = r.log_line(42);
    CHECK(line.find("step=42") == 0);
    CHECK(line.find("h4_dice=") != std::string::npos);
}
