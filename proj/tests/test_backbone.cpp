#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cd/backbone.hpp"
#include "cd/common.hpp"
#include "cd/config.hpp"

using namespace cd;

namespace {
const auto kTiny = ModelConfig::tiny();
}

TEST_CASE("cnn branch pyramid geometry") {
    torch::manual_seed(0);
    CnnBranch cnn(kTiny.cnn_widths);
    auto levels = cnn(torch::rand({1, 3, 256, 256}));
    REQUIRE(levels.size() == 4);
    const int sizes[4] = {64, 32, 16, 8};
    for (int l = 0; l < 4; ++l) {
        CHECK(levels[l].size(2) == sizes[l]);
        CHECK(levels[l].size(3) == sizes[l]);
        CHECK(levels[l].size(1) == kTiny.cnn_widths[l]);
    }
    CHECK_THROWS_AS(cnn(torch::rand({1, 3, 100, 100})), ShapeError);
}

TEST_CASE("cnn branch is siamese-deterministic and finite on zeros") {
    torch::manual_seed(1);
    CnnBranch cnn(kTiny.cnn_widths);
    auto x = torch::rand({1, 3, 64, 64});
    auto a = cnn(x);
    auto b = cnn(x.clone());
    for (int l = 0; l < 4; ++l) CHECK(a[l].equal(b[l]));

    auto z = cnn(torch::zeros({1, 3, 64, 64}));
    for (const auto& t : z) CHECK(t.isfinite().all().item<bool>());
}

TEST_CASE("transformer branch pyramid geometry and scaling") {
    torch::manual_seed(2);
    PvtBranch pvt(kTiny.pvt_widths, kTiny.pvt_heads, kTiny.pvt_depths, kTiny.pvt_sr_ratios,
                  kTiny.pvt_mlp_ratios);
    auto levels = pvt(torch::rand({1, 3, 256, 256}));
    REQUIRE(levels.size() == 4);
    const int sizes[4] = {64, 32, 16, 8};
    for (int l = 0; l < 4; ++l) {
        CHECK(levels[l].size(2) == sizes[l]);
        CHECK(levels[l].size(1) == kTiny.pvt_widths[l]);
    }
    // doubling the input size doubles every level
    auto big = pvt(torch::rand({1, 3, 512, 512}));
    for (int l = 0; l < 4; ++l) CHECK(big[l].size(2) == 2 * levels[l].size(2));
}

TEST_CASE("transformer attention rows sum to one") {
    torch::manual_seed(3);
    PvtAttention attn(32, 2, 4);
    attn->set_capture(true);
    auto tokens = torch::rand({2, 64, 32});
    attn->forward(tokens, 8, 8);
    auto a = attn->captured_attention();
    REQUIRE(a.defined());
    auto sums = a.sum(-1);
    CHECK((sums - 1.0).abs().max().item<double>() < 1e-5);
}

TEST_CASE("swin block cosine similarities are bounded") {
    torch::manual_seed(4);
    SwinV2Block blk(32, 4, 8, false);
    blk->set_capture(true);
    blk(torch::rand({1, 32, 16, 16}));
    auto cos = blk->captured_cosine();
    REQUIRE(cos.defined());
    CHECK(cos.abs().max().item<double>() <= 1.0 + 1e-5);
    auto attn = blk->captured_attention();
    CHECK((attn.sum(-1) - 1.0).abs().max().item<double>() < 1e-5);
}

TEST_CASE("swin shifted block runs with mask") {
    torch::manual_seed(5);
    SwinV2Block blk(16, 4, 8, true);
    auto y = blk(torch::rand({1, 16, 16, 16}));  // 16 > window: shift engages
    CHECK(y.sizes() == torch::IntArrayRef({1, 16, 16, 16}));
    CHECK(y.isfinite().all().item<bool>());
    auto same = blk(torch::rand({1, 16, 8, 8}));  // window == side: no shift
    CHECK(same.sizes() == torch::IntArrayRef({1, 16, 8, 8}));
    CHECK_THROWS_AS(blk(torch::rand({1, 16, 12, 12})), ShapeError);
}

TEST_CASE("scr branch stage plan and siamese property") {
    torch::manual_seed(6);
    ScrBranch scr(kTiny.scr_widths, kTiny.swin_window, kTiny.swin_heads);
    auto i1 = torch::rand({1, 3, 256, 256});

    auto one = scr(i1);
    CHECK(one.detail_full.sizes() ==
          torch::IntArrayRef({1, kTiny.scr_widths[0], 256, 256}));
    CHECK(one.detail_half.sizes() ==
          torch::IntArrayRef({1, kTiny.scr_widths[1], 128, 128}));
    CHECK(one.deep.sizes() == torch::IntArrayRef({1, kTiny.scr_widths[4], 16, 16}));

    auto pair = scr->forward_pair(i1, i1.clone());
    CHECK(pair.f_s_1.equal(pair.f_s_2));
    CHECK(pair.f_sd_1_full.equal(pair.f_sd_2_full));
    CHECK(pair.f_sd_1_half.equal(pair.f_sd_2_half));

    CHECK_THROWS_AS(scr->forward_pair(i1, torch::rand({1, 3, 128, 128})), GeometryError);
}
