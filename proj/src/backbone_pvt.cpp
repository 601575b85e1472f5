#include "cd/backbone.hpp"
#include "cd/common.hpp"

namespace cd {

PvtAttentionImpl::PvtAttentionImpl(int dim, int heads, int sr_ratio)
    : heads_(heads), sr_ratio_(sr_ratio) {
    if (dim % heads != 0) throw ConfigError("attention dim must divide head count");
    q = register_module("q", torch::nn::Linear(dim, dim));
    kv = register_module("kv", torch::nn::Linear(dim, 2 * dim));
    proj = register_module("proj", torch::nn::Linear(dim, dim));
    if (sr_ratio > 1) {
        sr = register_module(
            "sr", torch::nn::Conv2d(
                      torch::nn::Conv2dOptions(dim, dim, sr_ratio).stride(sr_ratio)));
        sr_norm = register_module(
            "sr_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    }
}

torch::Tensor PvtAttentionImpl::forward(const torch::Tensor& x, int64_t h, int64_t w) {
    const auto b = x.size(0);
    const auto n = x.size(1);
    const auto c = x.size(2);
    const auto hd = c / heads_;

    auto qh = q(x).reshape({b, n, heads_, hd}).permute({0, 2, 1, 3});

    torch::Tensor kv_src = x;
    if (sr_ratio_ > 1) {
        auto maps = x.transpose(1, 2).reshape({b, c, h, w});
        maps = sr(maps);
        kv_src = sr_norm(maps.flatten(2).transpose(1, 2));
    }
    auto kvp = kv(kv_src).reshape({b, kv_src.size(1), 2, heads_, hd}).permute({2, 0, 3, 1, 4});
    auto kh = kvp[0];
    auto vh = kvp[1];

    auto attn = torch::matmul(qh, kh.transpose(-2, -1)) / std::sqrt(double(hd));
    attn = torch::softmax(attn, -1);
    if (capture_) captured_ = attn.detach();

    auto out = torch::matmul(attn, vh).transpose(1, 2).reshape({b, n, c});
    return proj(out);
}

PvtBlockImpl::PvtBlockImpl(int dim, int heads, int sr_ratio, int mlp_ratio) {
    norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    attn = register_module("attn", PvtAttention(dim, heads, sr_ratio));
    norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
    const int hidden = dim * mlp_ratio;
    fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
    dw = register_module(
        "dw", torch::nn::Conv2d(
                  torch::nn::Conv2dOptions(hidden, hidden, 3).padding(1).groups(hidden)));
    fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor PvtBlockImpl::forward(const torch::Tensor& x, int64_t h, int64_t w) {
    auto y = x + attn->forward(norm1(x), h, w);
    auto z = fc1(norm2(y));
    const auto b = z.size(0);
    auto maps = z.transpose(1, 2).reshape({b, z.size(2), h, w});
    maps = dw(maps);
    z = torch::gelu(maps.flatten(2).transpose(1, 2));
    return y + fc2(z);
}

PvtBranchImpl::PvtBranchImpl(const std::array<int, 4>& widths, const std::array<int, 4>& heads,
                             const std::array<int, 4>& depths,
                             const std::array<int, 4>& sr_ratios,
                             const std::array<int, 4>& mlp_ratios)
    : depths_(depths) {
    for (int s = 0; s < 4; ++s) {
        const int in_ch = s == 0 ? 3 : widths[s - 1];
        const int k = s == 0 ? 7 : 3;
        const int stride = s == 0 ? 4 : 2;
        embeds_.push_back(register_module(
            "embed" + std::to_string(s + 1),
            torch::nn::Conv2d(
                torch::nn::Conv2dOptions(in_ch, widths[s], k).stride(stride).padding(k / 2))));
        embed_norms_.push_back(register_module(
            "embed_norm" + std::to_string(s + 1),
            torch::nn::LayerNorm(torch::nn::LayerNormOptions({widths[s]}))));
        for (int d = 0; d < depths[s]; ++d) {
            blocks_.push_back(register_module(
                "stage" + std::to_string(s + 1) + "_block" + std::to_string(d + 1),
                PvtBlock(widths[s], heads[s], sr_ratios[s], mlp_ratios[s])));
        }
        out_norms_.push_back(register_module(
            "out_norm" + std::to_string(s + 1),
            torch::nn::LayerNorm(torch::nn::LayerNormOptions({widths[s]}))));
    }
}

std::vector<torch::Tensor> PvtBranchImpl::forward(const torch::Tensor& image) {
    if (image.size(-1) % 32 != 0 || image.size(-2) % 32 != 0) {
        throw ShapeError("transformer branch requires sides divisible by 32, got " +
                         shape_str(image));
    }
    std::vector<torch::Tensor> levels;
    auto x = image;
    size_t block_idx = 0;
    for (int s = 0; s < 4; ++s) {
        auto maps = embeds_[s](x);
        const auto b = maps.size(0);
        const auto c = maps.size(1);
        const auto h = maps.size(2);
        const auto w = maps.size(3);
        auto tokens = embed_norms_[s](maps.flatten(2).transpose(1, 2));
        for (int d = 0; d < depths_[s]; ++d) {
            tokens = blocks_[block_idx++]->forward(tokens, h, w);
        }
        tokens = out_norms_[s](tokens);
        x = tokens.transpose(1, 2).reshape({b, c, h, w});
        levels.push_back(x);
    }
    return levels;
}

}  // namespace cd
