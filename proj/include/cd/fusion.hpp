#pragma once

#include <array>
#include <vector>

#include <torch/torch.h>

namespace cd {

// Bidirectional cross-attention between two feature maps of one scale.
// When both sides share a channel width the projections are shared, so
// identical inputs produce identical outputs.
class IsciLevelImpl : public torch::nn::Module {
public:
    IsciLevelImpl(int c_a, int c_b);
    std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& a,
                                                    const torch::Tensor& b);

    void set_capture(bool on) { capture_ = on; }
    const torch::Tensor& captured_affinity() const { return captured_; }

private:
    torch::Tensor cross(const torch::Tensor& from, const torch::Tensor& to,
                        torch::nn::Conv2d& q_proj, torch::nn::Conv2d& k_proj,
                        torch::nn::Conv2d& v_proj, torch::nn::Conv2d& out_proj);

    int embed_;
    bool shared_;
    torch::nn::Conv2d q_a{nullptr}, k_a{nullptr}, v_a{nullptr}, out_a{nullptr};
    torch::nn::Conv2d q_b{nullptr}, k_b{nullptr}, v_b{nullptr}, out_b{nullptr};
    bool capture_ = false;
    torch::Tensor captured_;
};
TORCH_MODULE(IsciLevel);

// Intra-scale cross-interaction across a list of matched scales.
class IsciImpl : public torch::nn::Module {
public:
    IsciImpl(const std::vector<int>& channels_a, const std::vector<int>& channels_b);
    std::pair<std::vector<torch::Tensor>, std::vector<torch::Tensor>> forward(
        const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b);
    IsciLevel level(size_t i) { return levels_.at(i); }

private:
    std::vector<IsciLevel> levels_;
};
TORCH_MODULE(Isci);

// Inter-scale feature fusion: merges an interacted feature pair into the three
// activation maps consumed by the decoder, at strides 8, 4 and 4. All
// convolutions are bias-free and the maps are emitted pre-activation, so
// all-zero inputs yield all-zero outputs.
class IsffImpl : public torch::nn::Module {
public:
    // strides must be sorted ascending, each dividing the next; the shallowest
    // stride is either 4 (full pyramid) or deeper (single deep level).
    IsffImpl(const std::vector<int>& channels_a, const std::vector<int>& channels_b,
             const std::vector<int>& strides, int a_width);
    std::array<torch::Tensor, 3> forward(const std::vector<torch::Tensor>& a,
                                         const std::vector<torch::Tensor>& b);

private:
    std::vector<int> strides_;
    std::vector<torch::nn::Conv2d> merges_;
    std::vector<torch::nn::Conv2d> steps_;  // one per 2x upsampling step down to stride 4
    torch::nn::Conv2d third{nullptr};
};
TORCH_MODULE(Isff);

// Concat the three branch slots (pre, post, relation) and convolve to D_j.
class FuseBranchesImpl : public torch::nn::Module {
public:
    FuseBranchesImpl(int a_width, int d_width);
    torch::Tensor forward(const torch::Tensor& a_pre, const torch::Tensor& a_post,
                          const torch::Tensor& a_rel);
    // The convolution alone (pre-norm/activation), for linearity checks.
    torch::Tensor linear(const torch::Tensor& a_pre, const torch::Tensor& a_post,
                         const torch::Tensor& a_rel);

private:
    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(FuseBranches);

// One decoder refinement: Conv(Concat(F_sd1, Up(D), F_sd2, F_pvf)).
class DecodeStepImpl : public torch::nn::Module {
public:
    DecodeStepImpl(int c_sd, int c_d, int c_pvf, int c_out);
    torch::Tensor forward(const torch::Tensor& d, const torch::Tensor& f_sd_1,
                          const torch::Tensor& f_sd_2, const torch::Tensor& f_pvf);

private:
    torch::nn::Conv2d conv{nullptr};
    torch::nn::GroupNorm norm{nullptr};
};
TORCH_MODULE(DecodeStep);

// Arithmetic mean of per-head probability maps.
torch::Tensor average_probs(const std::vector<torch::Tensor>& probs);

// Three 1x1 heads + sigmoid, ensembled by averaging in probability space.
class EnsembleHeadImpl : public torch::nn::Module {
public:
    explicit EnsembleHeadImpl(int c_dtilde);
    // returns (change map, per-head probability maps)
    std::pair<torch::Tensor, std::vector<torch::Tensor>> forward(
        const std::vector<torch::Tensor>& d_tildes);

private:
    std::vector<torch::nn::Conv2d> heads_;
};
TORCH_MODULE(EnsembleHead);

}  // namespace cd
