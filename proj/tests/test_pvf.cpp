#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cd/common.hpp"
#include "cd/losses.hpp"
#include "cd/pvf.hpp"

using namespace cd;

TEST_CASE("build_pvf endpoints are exact copies") {
    torch::manual_seed(0);
    for (int w : {2, 3, 4, 7}) {
        auto pre = torch::rand({3, 16, 16});
        auto post = torch::rand({3, 16, 16});
        auto stack = build_pvf(pre, post, w);
        CHECK(stack.sizes() == torch::IntArrayRef({w, 3, 16, 16}));
        CHECK(stack[0].equal(pre));
        CHECK(stack[w - 1].equal(post));
    }
}

TEST_CASE("build_pvf evaluates the interpolation rule") {
    auto pre = torch::zeros({3, 2, 2});
    auto post = torch::full({3, 2, 2}, 0.9);
    auto stack = build_pvf(pre, post, 4);
    const double expected[4] = {0.0, 0.3, 0.6, 0.9};
    for (int w = 0; w < 4; ++w) {
        CHECK(std::abs(stack[w].mean().item<double>() - expected[w]) < 1e-7);
    }

    // midpoint at W=3 equals the per-pixel arithmetic mean
    torch::manual_seed(1);
    auto a = torch::rand({3, 32, 32});
    auto b = torch::rand({3, 32, 32});
    auto mid = build_pvf(a, b, 3)[1];
    CHECK((mid - (a + b) / 2).abs().max().item<double>() < 1e-6);
}

TEST_CASE("build_pvf monotone in w per pixel") {
    torch::manual_seed(2);
    auto a = torch::rand({3, 8, 8});
    auto b = torch::rand({3, 8, 8});
    const int w_count = 5;
    auto stack = build_pvf(a, b, w_count);
    auto up = (b >= a);
    for (int w = 0; w + 1 < w_count; ++w) {
        auto diff = stack[w + 1] - stack[w];
        CHECK((diff >= -1e-7).logical_or(~up).all().item<bool>());
        CHECK((diff <= 1e-7).logical_or(up).all().item<bool>());
    }
}

TEST_CASE("build_pvf errors") {
    auto a = torch::rand({3, 8, 8});
    CHECK_THROWS_AS(build_pvf(a, a, 1), ParameterError);
    CHECK_THROWS_AS(build_pvf(a, torch::rand({3, 4, 4}), 3), GeometryError);
}

TEST_CASE("identical inputs give identical frames") {
    torch::manual_seed(3);
    auto a = torch::rand({3, 16, 16});
    auto stack = build_pvf(a, a.clone(), 4);
    for (int w = 0; w < 4; ++w) CHECK(stack[w].equal(a));
}

TEST_CASE("CRAM zero difference streams on constant sequences") {
    torch::manual_seed(4);
    Cram cram(8, 16);
    auto one = torch::rand({2, 1, 8, 12, 12});
    for (int w : {2, 3, 4}) {
        auto frames = one.repeat({1, w, 1, 1, 1});
        auto streams = cram->streams(frames);
        CHECK(streams[1].abs().max().item<double>() == 0.0);  // summed |diffs|
        CHECK(streams[2].abs().max().item<double>() == 0.0);  // endpoint |delta|
        CHECK(streams[0].allclose(one.squeeze(1)));           // mean = the frame
        auto out = cram(frames);
        CHECK(out.sizes() == torch::IntArrayRef({2, 16, 12, 12}));
    }
    CHECK_THROWS_AS(cram(torch::rand({2, 8, 12, 12})), ShapeError);
}

TEST_CASE("CCR branch export shapes at 256") {
    torch::manual_seed(5);
    CcrBranch ccr(4, 8, 64);
    auto stack = build_pvf(torch::rand({1, 3, 256, 256}), torch::rand({1, 3, 256, 256}), 4);
    auto out = ccr(stack);
    CHECK(out.f_pvf_1.sizes() == torch::IntArrayRef({1, 64, 128, 128}));
    CHECK(out.f_pvf_2.sizes() == torch::IntArrayRef({1, 64, 256, 256}));
    CHECK(out.supervision_logits.sizes() == torch::IntArrayRef({1, 1, 256, 256}));
    CHECK(out.f_pvf_1.isfinite().all().item<bool>());
    CHECK(out.f_pvf_2.isfinite().all().item<bool>());
}

TEST_CASE("CCR wrong frame count rejected") {
    CcrBranch ccr(4, 8, 16);
    auto stack = build_pvf(torch::rand({1, 3, 64, 64}), torch::rand({1, 3, 64, 64}), 3);
    CHECK_THROWS_AS(ccr(stack), ShapeError);
    CHECK_THROWS_AS(CcrBranch(1, 8, 16), ParameterError);
}

TEST_CASE("CCR supervision gradient matches finite differences") {
    torch::manual_seed(6);
    CcrBranch ccr(4, 8, 16);
    ccr->to(torch::kFloat64);
    auto pre = torch::rand({1, 3, 64, 64}, torch::kFloat64);
    auto post = torch::rand({1, 3, 64, 64}, torch::kFloat64);
    auto label = (torch::rand({1, 64, 64}, torch::kFloat64) > 0.7).to(torch::kFloat64);

    auto loss_fn = [&]() {
        auto out = ccr(build_pvf(pre, post, 4));
        auto prob = torch::sigmoid(out.supervision_logits).squeeze(1);
        return bce_loss(prob, label) + 0.5 * dice_loss(prob, label);
    };

    auto loss = loss_fn();
    ccr->zero_grad();
    loss.backward();

    // a first-block parameter, checked element by element against central FD
    auto params = ccr->named_parameters();
    auto weight = params["block1.conv1.weight"];
    REQUIRE(weight.grad().defined());
    const double h = 1e-5;
    torch::NoGradGuard none;  // finite differences need forward values only
    for (int i = 0; i < 3; ++i) {
        auto flat = weight.flatten();
        const auto idx = 37 * (i + 1);
        const double orig = flat[idx].item<double>();
        const double analytic = weight.grad().flatten()[idx].item<double>();
        flat[idx] = orig + h;
        const double up = loss_fn().item<double>();
        flat[idx] = orig - h;
        const double down = loss_fn().item<double>();
        flat[idx] = orig;
        const double fd = (up - down) / (2 * h);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-8});
        CHECK(std::abs(analytic - fd) / denom < 1e-3);
    }
}

TEST_CASE("temporal branch exports abstract scales only") {
    torch::manual_seed(7);
    TemporalBranch tb(4, 16, 32);
    auto stack = build_pvf(torch::rand({2, 3, 128, 128}), torch::rand({2, 3, 128, 128}), 4);
    auto out = tb(stack);
    CHECK(out.deep_s8.sizes() == torch::IntArrayRef({2, 32, 16, 16}));
    CHECK(out.deep_s4.sizes() == torch::IntArrayRef({2, 32, 32, 32}));
    CHECK(out.supervision_logits.sizes() == torch::IntArrayRef({2, 1, 128, 128}));
}
