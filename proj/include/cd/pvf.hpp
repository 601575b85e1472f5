#pragma once

#include <torch/torch.h>

namespace cd {

// Pseudo video frames by linear interpolation between the two epochs:
//   V_w = I1 + w/(W-1) * (I2 - I1),  0 <= w < W.
// Endpoint frames are direct copies of the inputs. Accepts (C,H,W) or
// (B,C,H,W) and returns (W,C,H,W) or (B,W,C,H,W).
torch::Tensor build_pvf(const torch::Tensor& image_pre, const torch::Tensor& image_post,
                        int frame_count);

// One CCR block: a shared per-frame conv stack followed by cross-frame mixing
// (1x1 convolution over the frame-stacked channel axis, residual).
// resample: 0 keep resolution, -1 halve (stride 2), +1 double (upsample first).
class CcrBlockImpl : public torch::nn::Module {
public:
    CcrBlockImpl(int frames, int in_ch, int out_ch, int resample);
    // (B,W,C,H,W') -> (B,W,C',H',W'')
    torch::Tensor forward(const torch::Tensor& x);

private:
    int frames_;
    int resample_;
    torch::nn::Conv2d conv1{nullptr}, conv2{nullptr}, mix{nullptr};
    torch::nn::GroupNorm norm1{nullptr}, norm2{nullptr};
};
TORCH_MODULE(CcrBlock);

// Change relationship aggregation: concat(mean over frames,
// sum of |first-order frame differences|, |last - first|) fused by 1x1 conv.
class CramImpl : public torch::nn::Module {
public:
    CramImpl(int in_ch, int out_ch);
    // (B,W,C,H,W') -> (B,out,H,W')
    torch::Tensor forward(const torch::Tensor& frames);
    // The three concatenated streams before fusion, for inspection/testing:
    // mean, summed |diffs|, endpoint |delta|.
    std::array<torch::Tensor, 3> streams(const torch::Tensor& frames) const;

private:
    torch::nn::Conv2d fuse{nullptr};
};
TORCH_MODULE(Cram);

struct CcrOutputs {
    torch::Tensor f_pvf_1;             // (B,64,S/2,S/2)
    torch::Tensor f_pvf_2;             // (B,64,S,S)
    torch::Tensor supervision_logits;  // (B,1,S,S)
};

// The continuous change relation branch: three CCR blocks over the PVF stack
// (full res -> half res -> full res), CRAM exports from blocks 2 and 3, and a
// supervision head on the third block. Depends only on the image pair.
class CcrBranchImpl : public torch::nn::Module {
public:
    CcrBranchImpl(int frames, int width, int export_width = 64);
    CcrOutputs forward(const torch::Tensor& pvf_stack);
    int frames() const { return frames_; }

private:
    int frames_;
    CcrBlock block1{nullptr}, block2{nullptr}, block3{nullptr};
    Cram cram2{nullptr}, cram3{nullptr};
    torch::nn::Conv2d sup_head{nullptr};
};
TORCH_MODULE(CcrBranch);

struct TemporalOutputs {
    torch::Tensor deep_s8;             // (B,export,S/8,S/8)
    torch::Tensor deep_s4;             // (B,export,S/4,S/4)
    torch::Tensor supervision_logits;  // (B,1,S,S)
};

// Ablation stand-in for the CCR branch: a frame-stacked encoder exporting only
// abstract features at strides 8 and 4 (no detail maps), with its own
// supervision head.
class TemporalBranchImpl : public torch::nn::Module {
public:
    TemporalBranchImpl(int frames, int width, int export_width);
    TemporalOutputs forward(const torch::Tensor& pvf_stack);

private:
    int frames_;
    torch::nn::Sequential enc4{nullptr};  // S -> S/4
    torch::nn::Sequential enc8{nullptr};  // S/4 -> S/8
    torch::nn::Conv2d out4{nullptr}, out8{nullptr}, sup_head{nullptr};
};
TORCH_MODULE(TemporalBranch);

}  // namespace cd
