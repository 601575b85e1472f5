#pragma once

#include <array>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "cd/backbone.hpp"
#include "cd/config.hpp"
#include "cd/fusion.hpp"
#include "cd/pvf.hpp"

namespace cd {

// What every trainable change detector hands to the loss/metric pipeline.
struct ForwardResult {
    torch::Tensor cm;                        // (B,S,S) probabilities
    std::vector<torch::Tensor> head_probs;   // deep-supervised decoder heads
    std::optional<torch::Tensor> aux_prob;   // CCR / temporal supervision head
};

class ChangeDetectorImpl : public torch::nn::Module {
public:
    ~ChangeDetectorImpl() override = default;
    virtual ForwardResult detect(const torch::Tensor& image_pre,
                                 const torch::Tensor& image_post) = 0;
};

// Full forward state of the triple branch network, exposed for tests and
// feature dumps.
struct TripleForward {
    std::array<std::array<torch::Tensor, 3>, 3> a;  // a[j][i], j scale slot, i branch slot
    std::array<torch::Tensor, 3> d;
    std::array<torch::Tensor, 3> d_tilde;
    std::vector<torch::Tensor> head_probs;
    torch::Tensor cm;
    torch::Tensor f_pvf_1, f_pvf_2;
    std::optional<torch::Tensor> aux_prob;
};

// The triple branch change detection network: CNN / transformer / SCR
// encoders, ISCI+ISFF fusion into nine activation maps, triple-feature merge,
// twice-executed detail decoding and a three-head ensemble, with a pluggable
// CCR branch over pseudo video frames.
class TripleBranchNetImpl : public ChangeDetectorImpl {
public:
    explicit TripleBranchNetImpl(const ModelConfig& cfg);

    TripleForward forward_full(const torch::Tensor& image_pre,
                               const torch::Tensor& image_post);
    ForwardResult detect(const torch::Tensor& image_pre,
                         const torch::Tensor& image_post) override;

    const ModelConfig& config() const { return cfg_; }
    CnnBranch cnn_branch() { return cnn; }
    PvtBranch transformer_branch() { return pvt; }
    ScrBranch scr_branch() { return scr; }
    CcrBranch ccr_branch() { return ccr; }
    FuseBranches fuse_at(int j) { return fuse_.at(j); }
    Isci isci_image() { return isci_img; }
    Isff isff_image() { return isff_img; }

private:
    ModelConfig cfg_;
    CnnBranch cnn{nullptr};
    PvtBranch pvt{nullptr};
    ScrBranch scr{nullptr};
    Isci isci_img{nullptr}, isci_scr{nullptr};
    Isff isff_img{nullptr}, isff_scr{nullptr};
    std::array<FuseBranches, 3> fuse_{nullptr, nullptr, nullptr};
    std::array<DecodeStep, 3> decode_half_{nullptr, nullptr, nullptr};
    std::array<DecodeStep, 3> decode_full_{nullptr, nullptr, nullptr};
    EnsembleHead ensemble{nullptr};
    CcrBranch ccr{nullptr};
    TemporalBranch temporal{nullptr};
    std::array<torch::nn::Conv2d, 3> temporal_inject_{nullptr, nullptr, nullptr};
};
TORCH_MODULE(TripleBranchNet);

// Minimal siamese-concatenation encoder-decoder used to demonstrate that the
// CCR branch plugs into other change detection networks.
class SiamBaselineImpl : public ChangeDetectorImpl {
public:
    explicit SiamBaselineImpl(const ModelConfig& cfg);
    ForwardResult detect(const torch::Tensor& image_pre,
                         const torch::Tensor& image_post) override;

private:
    ModelConfig cfg_;
    torch::nn::Sequential enc1{nullptr}, enc2{nullptr}, enc3{nullptr}, enc4{nullptr};
    torch::nn::Sequential dec4{nullptr}, dec3{nullptr};
    DecodeStep dec2{nullptr}, dec1{nullptr};
    torch::nn::Conv2d head{nullptr};
    CcrBranch ccr{nullptr};
    TemporalBranch temporal{nullptr};
    torch::nn::Conv2d inject4{nullptr}, inject3{nullptr};
};
TORCH_MODULE(SiamBaseline);

std::shared_ptr<ChangeDetectorImpl> build_model(const TrainConfig& cfg);

// Parameter-group name for the gradient-flow checks: one of
// cnn|transformer|scr|ccr|fusion|heads|baseline.
std::string parameter_group(const std::string& param_name);

std::int64_t parameter_count(const torch::nn::Module& m);

}  // namespace cd
