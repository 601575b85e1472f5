#include <cmath>

#include "cd/backbone.hpp"
#include "cd/common.hpp"

namespace cd {

namespace {

// (B,H,W,C) -> (B*nW, window*window, C)
torch::Tensor window_partition(const torch::Tensor& x, int64_t window) {
    const auto b = x.size(0), h = x.size(1), w = x.size(2), c = x.size(3);
    auto v = x.view({b, h / window, window, w / window, window, c});
    return v.permute({0, 1, 3, 2, 4, 5}).contiguous().view({-1, window * window, c});
}

torch::Tensor window_reverse(const torch::Tensor& win, int64_t window, int64_t b, int64_t h,
                             int64_t w) {
    const auto c = win.size(2);
    auto v = win.view({b, h / window, w / window, window, window, c});
    return v.permute({0, 1, 3, 2, 4, 5}).contiguous().view({b, h, w, c});
}

// Attention mask for shifted windows: token pairs originating from different
// pre-shift regions must not attend to each other.
torch::Tensor shift_mask(int64_t h, int64_t w, int64_t window, int64_t shift) {
    auto img = torch::zeros({1, h, w, 1});
    int64_t region = 0;
    const std::array<std::pair<int64_t, int64_t>, 3> spans_h = {
        std::pair<int64_t, int64_t>{0, h - window},
        {h - window, h - shift},
        {h - shift, h}};
    const std::array<std::pair<int64_t, int64_t>, 3> spans_w = {
        std::pair<int64_t, int64_t>{0, w - window},
        {w - window, w - shift},
        {w - shift, w}};
    for (auto [h0, h1] : spans_h) {
        for (auto [w0, w1] : spans_w) {
            if (h1 > h0 && w1 > w0) {
                img.slice(1, h0, h1).slice(2, w0, w1).fill_(static_cast<double>(region));
            }
            ++region;
        }
    }
    auto win = window_partition(img, window).squeeze(-1);  // (nW, N)
    auto diff = win.unsqueeze(1) - win.unsqueeze(2);
    return diff.ne(0).to(torch::kFloat32) * -100.0;  // (nW, N, N)
}

}  // namespace

SwinV2BlockImpl::SwinV2BlockImpl(int dim, int heads, int window, bool shifted)
    : dim_(dim), heads_(heads), window_(window), shifted_(shifted) {
    if (dim % heads != 0) throw ConfigError("Swin dim must divide head count");
    qkv = register_module("qkv", torch::nn::Linear(dim, 3 * dim));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    fc1 = register_module("fc1", torch::nn::Linear(dim, 4 * dim));
    fc2 = register_module("fc2", torch::nn::Linear(4 * dim, dim));

    logit_scale_ =
        register_parameter("logit_scale", torch::full({heads, 1, 1}, std::log(10.0)));
    const int64_t span = 2 * window - 1;
    rel_bias_table_ =
        register_parameter("rel_bias_table", torch::randn({span * span, heads}) * 0.02);

    auto coords =
        torch::stack(torch::meshgrid({torch::arange(window), torch::arange(window)}, "ij"))
            .flatten(1);                                   // (2, w*w)
    auto rel = coords.unsqueeze(2) - coords.unsqueeze(1);  // (2, w*w, w*w)
    rel = rel.permute({1, 2, 0}) + (window - 1);
    auto index = rel.select(2, 0) * span + rel.select(2, 1);
    rel_index_ = register_buffer("rel_index", index.flatten());  // (w^4)
}

// windows: (B*nW, N, C); mask: (nW, N, N) or undefined. Returns (B*nW, N, C).
torch::Tensor SwinV2BlockImpl::attention(const torch::Tensor& windows, int64_t batch,
                                         int64_t n_windows) {
    const auto bw = windows.size(0);
    const auto n = windows.size(1);
    const auto hd = dim_ / heads_;

    auto qkv_out = qkv(windows).reshape({bw, n, 3, heads_, hd}).permute({2, 0, 3, 1, 4});
    namespace F = torch::nn::functional;
    auto qh = F::normalize(qkv_out[0], F::NormalizeFuncOptions().dim(-1));
    auto kh = F::normalize(qkv_out[1], F::NormalizeFuncOptions().dim(-1));
    auto vh = qkv_out[2];

    auto cos = torch::matmul(qh, kh.transpose(-2, -1));  // scaled cosine attention
    if (capture_) captured_cos_ = cos.detach();
    auto scale = torch::clamp(logit_scale_, c10::nullopt, std::log(100.0)).exp();
    auto attn = cos * scale;

    auto bias =
        rel_bias_table_.index_select(0, rel_index_).view({n, n, heads_}).permute({2, 0, 1});
    attn = attn + bias.unsqueeze(0);

    if (mask_.defined()) {
        attn = attn.view({batch, n_windows, heads_, n, n}) + mask_.unsqueeze(1).unsqueeze(0);
        attn = attn.view({bw, heads_, n, n});
    }
    attn = torch::softmax(attn, -1);
    if (capture_) captured_attn_ = attn.detach();

    auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({bw, n, dim_});
    return proj(out);
}

torch::Tensor SwinV2BlockImpl::forward(const torch::Tensor& x) {
    const auto b = x.size(0), c = x.size(1), h = x.size(2), w = x.size(3);
    if (c != dim_) throw ShapeError("SwinV2Block channel mismatch: " + shape_str(x));
    if (h < window_ || w < window_ || h % window_ != 0 || w % window_ != 0) {
        throw ShapeError("SwinV2Block needs sides that are multiples of window " +
                         std::to_string(window_) + ", got " + shape_str(x));
    }
    const int64_t shift = (shifted_ && h > window_ && w > window_) ? window_ / 2 : 0;

    auto tokens = x.permute({0, 2, 3, 1});  // (B,H,W,C)
    if (shift > 0) tokens = torch::roll(tokens, {-shift, -shift}, {1, 2});
    auto windows = window_partition(tokens, window_);
    const int64_t n_windows = windows.size(0) / b;

    mask_ = shift > 0 ? shift_mask(h, w, window_, shift).to(x.device()) : torch::Tensor();
    auto out = attention(windows, b, n_windows);
    mask_ = torch::Tensor();

    auto merged = window_reverse(out, window_, b, h, w);
    if (shift > 0) merged = torch::roll(merged, {shift, shift}, {1, 2});

    // post-normalization residuals (Swin-V2 ordering)
    auto y = x + norm1(merged).permute({0, 3, 1, 2});
    auto flat = y.permute({0, 2, 3, 1});
    auto mlp = fc2(torch::gelu(fc1(flat)));
    return y + norm2(mlp).permute({0, 3, 1, 2});
}

// ----------------------------------------------------------------- ScrBranch

namespace {
// A run of listed "convolution blocks": each block is two conv units,
// stride-2 on the first unit where the stage downsamples.
torch::nn::Sequential conv_stage(int in_ch, int out_ch, int blocks, bool downsample) {
    torch::nn::Sequential seq;
    for (int b = 0; b < blocks; ++b) {
        seq->push_back(ConvUnit(b == 0 ? in_ch : out_ch, out_ch,
                                (b == 0 && downsample) ? 2 : 1));
        seq->push_back(ConvUnit(out_ch, out_ch, 1));
    }
    return seq;
}
}  // namespace

ScrBranchImpl::ScrBranchImpl(const std::array<int, 5>& w, int window, int heads) {
    stage1 = register_module("stage1", conv_stage(3, w[0], 2, false));
    stage2 = register_module("stage2", conv_stage(w[0], w[1], 2, true));
    down3 = register_module("down3", ConvUnit(w[1], w[2], 2));
    swin3_ = register_module("swin3", SwinV2Block(w[2], heads, window, false));
    stage4 = register_module("stage4", conv_stage(w[2], w[3], 3, true));
    down5 = register_module("down5", ConvUnit(w[3], w[4], 2));
    for (int i = 0; i < 3; ++i) {
        swin5_.push_back(register_module("swin5_" + std::to_string(i + 1),
                                         SwinV2Block(w[4], heads, window, i % 2 == 1)));
    }
}

ScrSingle ScrBranchImpl::forward(const torch::Tensor& image) {
    ScrSingle out;
    out.detail_full = stage1->forward(image);        // stride 1
    out.detail_half = stage2->forward(out.detail_full);  // stride 2
    auto x = swin3_(down3(out.detail_half));         // stride 4
    x = stage4->forward(x);                          // stride 8
    x = down5(x);                                    // stride 16
    for (auto& blk : swin5_) x = blk(x);
    out.deep = x;
    return out;
}

ScrOutputs ScrBranchImpl::forward_pair(const torch::Tensor& image_pre,
                                       const torch::Tensor& image_post) {
    if (image_pre.sizes() != image_post.sizes()) {
        throw GeometryError("SCR branch: image geometry mismatch " + shape_str(image_pre) +
                            " vs " + shape_str(image_post));
    }
    auto a = forward(image_pre);
    auto b = forward(image_post);
    return ScrOutputs{a.deep, b.deep, a.detail_full, a.detail_half, b.detail_full,
                      b.detail_half};
}

}  // namespace cd
