#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

#include "cd/config.hpp"

namespace cd {

// 3x3 conv + GroupNorm + ReLU.
class ConvUnitImpl : public torch::nn::Module {
public:
    ConvUnitImpl(int in_ch, int out_ch, int stride = 1);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(ConvUnit);

// ------------------------------------------------------------- CNN branch

class BasicBlockImpl : public torch::nn::Module {
public:
    BasicBlockImpl(int in_ch, int out_ch, int stride);
    torch::Tensor forward(const torch::Tensor& x);

private:
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Sequential downsample{nullptr};
};
TORCH_MODULE(BasicBlock);

// ResNet18-style siamese encoder: 4 levels at strides 4/8/16/32.
class CnnBranchImpl : public torch::nn::Module {
public:
    explicit CnnBranchImpl(const std::array<int, 4>& widths);
    std::vector<torch::Tensor> forward(const torch::Tensor& image);

private:
    torch::nn::Conv2d stem{nullptr};
    torch::nn::GroupNorm stem_norm{nullptr};
    torch::nn::Sequential layer1{nullptr}, layer2{nullptr}, layer3{nullptr}, layer4{nullptr};
};
TORCH_MODULE(CnnBranch);

// ------------------------------------------------------ transformer branch

// Spatial-reduction attention over (B,N,C) tokens.
class PvtAttentionImpl : public torch::nn::Module {
public:
    PvtAttentionImpl(int dim, int heads, int sr_ratio);
    torch::Tensor forward(const torch::Tensor& x, int64_t h, int64_t w);

    void set_capture(bool on) { capture_ = on; }
    const torch::Tensor& captured_attention() const { return captured_; }

private:
    int heads_;
    int sr_ratio_;
    torch::nn::Linear q{nullptr}, kv{nullptr}, proj{nullptr};
    torch::nn::Conv2d sr{nullptr};
    torch::nn::LayerNorm sr_norm{nullptr};
    bool capture_ = false;
    torch::Tensor captured_;
};
TORCH_MODULE(PvtAttention);

class PvtBlockImpl : public torch::nn::Module {
public:
    PvtBlockImpl(int dim, int heads, int sr_ratio, int mlp_ratio);
    torch::Tensor forward(const torch::Tensor& x, int64_t h, int64_t w);
    PvtAttention attn{nullptr};

private:
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::nn::Linear fc1{nullptr}, fc2{nullptr};
    torch::nn::Conv2d dw{nullptr};  // depthwise conv inside the feed-forward
};
TORCH_MODULE(PvtBlock);

// PVTv2-B1-style siamese encoder: 4 stages with overlapping patch embeddings,
// spatial-reduction attention and conv feed-forward; strides 4/8/16/32.
class PvtBranchImpl : public torch::nn::Module {
public:
    PvtBranchImpl(const std::array<int, 4>& widths, const std::array<int, 4>& heads,
                  const std::array<int, 4>& depths, const std::array<int, 4>& sr_ratios,
                  const std::array<int, 4>& mlp_ratios);
    std::vector<torch::Tensor> forward(const torch::Tensor& image);
    PvtBlock first_block() { return blocks_[0]; }

private:
    std::vector<torch::nn::Conv2d> embeds_;
    std::vector<torch::nn::LayerNorm> embed_norms_;
    std::vector<PvtBlock> blocks_;
    std::array<int, 4> depths_;
    std::vector<torch::nn::LayerNorm> out_norms_;
};
TORCH_MODULE(PvtBranch);

// ------------------------------------------------------------- SCR branch

// Swin-V2 block on (B,C,H,W) maps: window attention with scaled cosine
// similarity, learned relative position bias, post-normalization residuals,
// cyclic shift with masking on odd blocks when the map exceeds one window.
class SwinV2BlockImpl : public torch::nn::Module {
public:
    SwinV2BlockImpl(int dim, int heads, int window, bool shifted);
    torch::Tensor forward(const torch::Tensor& x);

    void set_capture(bool on) { capture_ = on; }
    // cosine similarities (pre temperature/bias) of the last captured forward
    const torch::Tensor& captured_cosine() const { return captured_cos_; }
    const torch::Tensor& captured_attention() const { return captured_attn_; }

private:
    torch::Tensor attention(const torch::Tensor& windows, int64_t batch, int64_t n_windows);

    int dim_, heads_, window_;
    bool shifted_;
    torch::nn::Linear qkv{nullptr}, proj{nullptr}, fc1{nullptr}, fc2{nullptr};
    torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
    torch::Tensor logit_scale_;      // per-head temperature (log space)
    torch::Tensor rel_bias_table_;   // ((2w-1)^2, heads)
    torch::Tensor rel_index_;        // buffer (w^2 * w^2)
    torch::Tensor mask_;             // transient shifted-window mask
    bool capture_ = false;
    torch::Tensor captured_cos_, captured_attn_;
};
TORCH_MODULE(SwinV2Block);

struct ScrSingle {
    torch::Tensor detail_full;  // stage 1 output, stride 1
    torch::Tensor detail_half;  // stage 2 output, stride 2
    torch::Tensor deep;         // stage 5 output, stride 16
};

struct ScrOutputs {
    torch::Tensor f_s_1, f_s_2;            // deep mixed features
    torch::Tensor f_sd_1_full, f_sd_1_half;  // detail features of image 1
    torch::Tensor f_sd_2_full, f_sd_2_half;  // detail features of image 2
};

// Serial conv/Swin-V2 hybrid: five stages at strides 1/2/4/8/16 with block
// counts (2 conv, 2 conv, 1 Swin, 3 conv, 3 Swin), applied siamese.
class ScrBranchImpl : public torch::nn::Module {
public:
    ScrBranchImpl(const std::array<int, 5>& widths, int window, int heads);
    ScrSingle forward(const torch::Tensor& image);
    ScrOutputs forward_pair(const torch::Tensor& image_pre, const torch::Tensor& image_post);
    SwinV2Block first_swin() { return swin3_; }

private:
    torch::nn::Sequential stage1{nullptr}, stage2{nullptr}, stage4{nullptr};
    ConvUnit down3{nullptr}, down5{nullptr};
    SwinV2Block swin3_{nullptr};
    std::vector<SwinV2Block> swin5_;
};
TORCH_MODULE(ScrBranch);

}  // namespace cd
