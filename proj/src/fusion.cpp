#include "cd/fusion.hpp"

#include <cmath>

#include "cd/common.hpp"

namespace cd {

// ---------------------------------------------------------------------- ISCI

namespace {
int embed_width(int c_a, int c_b) {
    return std::max(8, std::min(c_a, c_b) / 4);
}
torch::nn::Conv2d proj1x1(int in_ch, int out_ch) {
    return torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 1));
}
// Keys/values are average-pooled so the affinity stays tractable at shallow
// scales; queries keep full resolution, so output shapes are unchanged.
int kv_pool_ratio(int64_t side) {
    return side > 8 ? static_cast<int>(side / 8) : 1;
}
}  // namespace

IsciLevelImpl::IsciLevelImpl(int c_a, int c_b)
    : embed_(embed_width(c_a, c_b)), shared_(c_a == c_b) {
    q_a = register_module("q_a", proj1x1(c_a, embed_));
    k_a = register_module("k_a", proj1x1(c_a, embed_));
    v_a = register_module("v_a", proj1x1(c_a, embed_));
    out_a = register_module("out_a", proj1x1(embed_, c_a));
    if (shared_) {
        q_b = q_a;
        k_b = k_a;
        v_b = v_a;
        out_b = out_a;
    } else {
        q_b = register_module("q_b", proj1x1(c_b, embed_));
        k_b = register_module("k_b", proj1x1(c_b, embed_));
        v_b = register_module("v_b", proj1x1(c_b, embed_));
        out_b = register_module("out_b", proj1x1(embed_, c_b));
    }
}

torch::Tensor IsciLevelImpl::cross(const torch::Tensor& from, const torch::Tensor& to,
                                   torch::nn::Conv2d& q_proj, torch::nn::Conv2d& k_proj,
                                   torch::nn::Conv2d& v_proj, torch::nn::Conv2d& out_proj) {
    const auto b = from.size(0), h = from.size(2), w = from.size(3);
    auto qt = q_proj(from).flatten(2).transpose(1, 2);  // (B,N,E)
    auto kv_src = to;
    if (const int sr = kv_pool_ratio(std::min(to.size(2), to.size(3))); sr > 1) {
        kv_src = torch::avg_pool2d(to, sr, sr);
    }
    auto kt = k_proj(kv_src).flatten(2).transpose(1, 2);  // (B,M,E)
    auto vt = v_proj(kv_src).flatten(2).transpose(1, 2);
    auto affinity = torch::softmax(
        torch::matmul(qt, kt.transpose(-2, -1)) / std::sqrt(double(embed_)), -1);
    if (capture_) captured_ = affinity.detach();
    auto agg = torch::matmul(affinity, vt).transpose(1, 2).reshape({b, embed_, h, w});
    return from + out_proj(agg);
}

std::pair<torch::Tensor, torch::Tensor> IsciLevelImpl::forward(const torch::Tensor& a,
                                                               const torch::Tensor& b) {
    check_same_spatial(a, b, "ISCI level inputs");
    auto ia = cross(a, b, q_a, k_b, v_b, out_a);
    auto ib = cross(b, a, q_b, k_a, v_a, out_b);
    return {ia, ib};
}

IsciImpl::IsciImpl(const std::vector<int>& channels_a, const std::vector<int>& channels_b) {
    if (channels_a.size() != channels_b.size()) {
        throw ShapeError("ISCI level count mismatch");
    }
    for (size_t i = 0; i < channels_a.size(); ++i) {
        levels_.push_back(register_module("level" + std::to_string(i + 1),
                                          IsciLevel(channels_a[i], channels_b[i])));
    }
}

std::pair<std::vector<torch::Tensor>, std::vector<torch::Tensor>> IsciImpl::forward(
    const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
    if (a.size() != levels_.size() || b.size() != levels_.size()) {
        throw ShapeError("ISCI expects " + std::to_string(levels_.size()) +
                         " levels, got " + std::to_string(a.size()) + "/" +
                         std::to_string(b.size()));
    }
    std::vector<torch::Tensor> out_a(a.size()), out_b(b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        std::tie(out_a[i], out_b[i]) = levels_[i]->forward(a[i], b[i]);
    }
    return {out_a, out_b};
}

// ---------------------------------------------------------------------- ISFF

IsffImpl::IsffImpl(const std::vector<int>& channels_a, const std::vector<int>& channels_b,
                   const std::vector<int>& strides, int a_width)
    : strides_(strides) {
    if (strides.empty() || channels_a.size() != strides.size() ||
        channels_b.size() != strides.size()) {
        throw ShapeError("ISFF channel/stride lists must align");
    }
    auto conv_nb = [](int in_ch, int out_ch, int k) {
        return torch::nn::Conv2d(
            torch::nn::Conv2dOptions(in_ch, out_ch, k).padding(k / 2).bias(false));
    };
    for (size_t i = 0; i < strides.size(); ++i) {
        merges_.push_back(register_module("merge" + std::to_string(i + 1),
                                          conv_nb(channels_a[i] + channels_b[i], a_width, 1)));
    }
    for (int s = strides.back(); s > 4; s /= 2) {
        steps_.push_back(
            register_module("step_s" + std::to_string(s / 2), conv_nb(a_width, a_width, 3)));
    }
    third = register_module("third", conv_nb(2 * a_width, a_width, 3));
}

std::array<torch::Tensor, 3> IsffImpl::forward(const std::vector<torch::Tensor>& a,
                                               const std::vector<torch::Tensor>& b) {
    if (a.size() != strides_.size() || b.size() != strides_.size()) {
        throw ShapeError("ISFF expects " + std::to_string(strides_.size()) + " levels");
    }
    std::vector<torch::Tensor> merged(a.size());
    for (size_t i = 0; i < a.size(); ++i) {
        check_same_spatial(a[i], b[i], "ISFF level inputs");
        merged[i] = merges_[i](torch::cat({a[i], b[i]}, 1));
    }

    // top-down: walk from the deepest stride to 4, collecting the pre-activation
    // map at stride 8 (A_1) and stride 4 (A_2)
    auto find_level = [&](int stride) -> const torch::Tensor* {
        for (size_t i = 0; i < strides_.size(); ++i) {
            if (strides_[i] == stride) return &merged[i];
        }
        return nullptr;
    };
    torch::Tensor a1, a2;
    auto act = torch::relu(merged.back());
    size_t step_idx = 0;
    for (int s = strides_.back(); s > 4; s /= 2) {
        auto x = up2(act);
        if (const auto* lateral = find_level(s / 2)) x = x + *lateral;
        auto linear = steps_[step_idx++]->forward(x);
        if (s / 2 == 8) a1 = linear;
        if (s / 2 == 4) a2 = linear;
        act = torch::relu(linear);
    }
    auto a3 = third(torch::cat({torch::relu(a2), up2(torch::relu(a1))}, 1));
    return {a1, a2, a3};
}

// ------------------------------------------------------------- FuseBranches

FuseBranchesImpl::FuseBranchesImpl(int a_width, int d_width) {
    conv = register_module(
        "conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * a_width, d_width, 3).padding(1)));
    norm = register_module(
        "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(d_width), d_width)));
}

torch::Tensor FuseBranchesImpl::linear(const torch::Tensor& a_pre, const torch::Tensor& a_post,
                                       const torch::Tensor& a_rel) {
    check_same_spatial(a_pre, a_post, "fuse_branches(a1,a2)");
    check_same_spatial(a_pre, a_rel, "fuse_branches(a1,a3)");
    return conv(nhwc(torch::cat({a_pre, a_post, a_rel}, 1)));
}

torch::Tensor FuseBranchesImpl::forward(const torch::Tensor& a_pre,
                                        const torch::Tensor& a_post,
                                        const torch::Tensor& a_rel) {
    return torch::relu(norm(linear(a_pre, a_post, a_rel)));
}

// ---------------------------------------------------------------- DecodeStep

DecodeStepImpl::DecodeStepImpl(int c_sd, int c_d, int c_pvf, int c_out) {
    conv = register_module(
        "conv", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(2 * c_sd + c_d + c_pvf, c_out, 3).padding(1)));
    norm = register_module(
        "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(c_out), c_out)));
}

torch::Tensor DecodeStepImpl::forward(const torch::Tensor& d, const torch::Tensor& f_sd_1,
                                      const torch::Tensor& f_sd_2,
                                      const torch::Tensor& f_pvf) {
    check_same_spatial(f_sd_1, f_sd_2, "decode_step(f_sd_1,f_sd_2)");
    check_same_spatial(f_sd_1, f_pvf, "decode_step(f_sd_1,f_pvf)");
    if (d.size(-2) * 2 != f_sd_1.size(-2) || d.size(-1) * 2 != f_sd_1.size(-1)) {
        throw ShapeError("decode_step: d " + shape_str(d) + " must be half of details " +
                         shape_str(f_sd_1));
    }
    auto up_d = up2(d);
    auto x = nhwc(torch::cat({f_sd_1, up_d, f_sd_2, f_pvf}, 1));  // concat order of the merge
    return torch::relu(norm(conv(x)));
}

// -------------------------------------------------------------- EnsembleHead

torch::Tensor average_probs(const std::vector<torch::Tensor>& probs) {
    if (probs.empty()) throw ArityError("average_probs: no heads");
    torch::Tensor sum = probs[0];
    for (size_t i = 1; i < probs.size(); ++i) sum = sum + probs[i];
    return sum / static_cast<double>(probs.size());
}

EnsembleHeadImpl::EnsembleHeadImpl(int c_dtilde) {
    for (int j = 0; j < 3; ++j) {
        heads_.push_back(register_module(
            "head" + std::to_string(j + 1),
            torch::nn::Conv2d(torch::nn::Conv2dOptions(c_dtilde, 1, 1))));
    }
}

std::pair<torch::Tensor, std::vector<torch::Tensor>> EnsembleHeadImpl::forward(
    const std::vector<torch::Tensor>& d_tildes) {
    if (d_tildes.size() != 3) {
        throw ArityError("ensemble expects exactly 3 refined features, got " +
                         std::to_string(d_tildes.size()));
    }
    std::vector<torch::Tensor> probs;
    probs.reserve(3);
    for (int j = 0; j < 3; ++j) {
        probs.push_back(torch::sigmoid(heads_[j](d_tildes[j])).squeeze(1));
    }
    return {average_probs(probs), probs};
}

}  // namespace cd
