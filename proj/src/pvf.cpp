#include "cd/pvf.hpp"

#include "cd/common.hpp"

namespace cd {

torch::Tensor build_pvf(const torch::Tensor& image_pre, const torch::Tensor& image_post,
                        int frame_count) {
    if (frame_count < 2) {
        throw ParameterError("build_pvf requires frame_count >= 2, got " +
                             std::to_string(frame_count));
    }
    if (image_pre.sizes() != image_post.sizes()) {
        throw GeometryError("build_pvf: image geometry mismatch " + shape_str(image_pre) +
                            " vs " + shape_str(image_post));
    }
    std::vector<torch::Tensor> frames;
    frames.reserve(frame_count);
    auto delta = image_post - image_pre;
    for (int w = 0; w < frame_count; ++w) {
        if (w == 0) {
            frames.push_back(image_pre.clone());
        } else if (w == frame_count - 1) {
            frames.push_back(image_post.clone());
        } else {
            const double a = static_cast<double>(w) / (frame_count - 1);
            frames.push_back(image_pre + a * delta);
        }
    }
    return torch::stack(frames, image_pre.dim() == 4 ? 1 : 0);
}

// ------------------------------------------------------------------ CcrBlock

CcrBlockImpl::CcrBlockImpl(int frames, int in_ch, int out_ch, int resample)
    : frames_(frames), resample_(resample) {
    const int stride1 = resample == -1 ? 2 : 1;
    conv1 = register_module(
        "conv1", torch::nn::Conv2d(
                     torch::nn::Conv2dOptions(in_ch, out_ch, 3).stride(stride1).padding(1)));
    conv2 = register_module(
        "conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1)));
    norm1 = register_module("norm1",
                            torch::nn::GroupNorm(torch::nn::GroupNormOptions(
                                norm_groups(out_ch), out_ch)));
    norm2 = register_module("norm2",
                            torch::nn::GroupNorm(torch::nn::GroupNormOptions(
                                norm_groups(out_ch), out_ch)));
    mix = register_module(
        "mix", torch::nn::Conv2d(torch::nn::Conv2dOptions(frames * out_ch, frames * out_ch, 1)));
}

torch::Tensor CcrBlockImpl::forward(const torch::Tensor& x) {
    if (x.dim() != 5 || x.size(1) != frames_) {
        throw ShapeError("CcrBlock expects (B,W,C,H,W) with W=" + std::to_string(frames_) +
                         ", got " + shape_str(x));
    }
    const auto b = x.size(0);
    auto y = nhwc(x.reshape({b * frames_, x.size(2), x.size(3), x.size(4)}));
    y = torch::relu(norm1(conv1(y)));
    y = torch::relu(norm2(conv2(y)));
    // cross-frame mixing on the frame-stacked channel axis
    auto stacked = nhwc(y.reshape({b, frames_ * y.size(1), y.size(2), y.size(3)}));
    stacked = stacked + torch::relu(mix(stacked));
    if (resample_ == 1) stacked = up2(stacked);  // restore resolution at the block output
    return stacked.reshape({b, frames_, y.size(1), stacked.size(2), stacked.size(3)});
}

// ---------------------------------------------------------------------- CRAM

CramImpl::CramImpl(int in_ch, int out_ch) {
    fuse = register_module(
        "fuse", torch::nn::Conv2d(torch::nn::Conv2dOptions(3 * in_ch, out_ch, 1)));
}

std::array<torch::Tensor, 3> CramImpl::streams(const torch::Tensor& frames) const {
    if (frames.dim() != 5) {
        throw ShapeError("CRAM expects (B,W,C,H,W), got " + shape_str(frames));
    }
    if (frames.size(1) < 2) throw ShapeError("CRAM requires at least 2 frames");
    auto mean = frames.mean(1);
    auto diffs = frames.slice(1, 1) - frames.slice(1, 0, frames.size(1) - 1);
    auto motion = diffs.abs().sum(1);
    auto endpoint = (frames.select(1, frames.size(1) - 1) - frames.select(1, 0)).abs();
    return {mean, motion, endpoint};
}

torch::Tensor CramImpl::forward(const torch::Tensor& frames) {
    auto s = streams(frames);
    return fuse(nhwc(torch::cat({s[0], s[1], s[2]}, 1)));
}

// ----------------------------------------------------------------- CcrBranch

CcrBranchImpl::CcrBranchImpl(int frames, int width, int export_width) : frames_(frames) {
    if (frames < 2) throw ParameterError("CCR branch requires frames >= 2");
    block1 = register_module("block1", CcrBlock(frames, 3, width, 0));
    block2 = register_module("block2", CcrBlock(frames, width, width, -1));
    block3 = register_module("block3", CcrBlock(frames, width, width, +1));
    cram2 = register_module("cram2", Cram(width, export_width));
    cram3 = register_module("cram3", Cram(width, export_width));
    sup_head = register_module(
        "sup_head",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(frames * width, 1, 1)));
}

CcrOutputs CcrBranchImpl::forward(const torch::Tensor& pvf_stack) {
    auto x = pvf_stack.dim() == 4 ? pvf_stack.unsqueeze(0) : pvf_stack;
    if (x.dim() != 5) {
        throw ShapeError("CCR branch expects (B,W,3,H,W), got " + shape_str(pvf_stack));
    }
    const auto s = x.size(-1);
    auto f1 = block1(x);             // (B,W,C,S,S)
    auto f2 = block2(f1);            // (B,W,C,S/2,S/2)
    auto f3 = block3(f2);            // (B,W,C,S,S)
    CcrOutputs out;
    out.f_pvf_1 = cram2(f2);
    out.f_pvf_2 = cram3(f3);
    auto b3 = f3.reshape({f3.size(0), frames_ * f3.size(2), f3.size(3), f3.size(4)});
    out.supervision_logits = resize_to(sup_head(b3), s, s);
    return out;
}

// ------------------------------------------------------------ TemporalBranch

namespace {
torch::nn::Sequential conv_stage(int in_ch, int out_ch) {
    using namespace torch::nn;
    return Sequential(Conv2d(Conv2dOptions(in_ch, out_ch, 3).stride(2).padding(1)),
                      GroupNorm(GroupNormOptions(norm_groups(out_ch), out_ch)), ReLU(),
                      Conv2d(Conv2dOptions(out_ch, out_ch, 3).stride(2).padding(1)),
                      GroupNorm(GroupNormOptions(norm_groups(out_ch), out_ch)), ReLU());
}
}  // namespace

TemporalBranchImpl::TemporalBranchImpl(int frames, int width, int export_width)
    : frames_(frames) {
    enc4 = register_module("enc4", conv_stage(3 * frames, width));
    enc8 = register_module("enc8",
                           torch::nn::Sequential(
                               torch::nn::Conv2d(
                                   torch::nn::Conv2dOptions(width, width * 2, 3).stride(2).padding(1)),
                               torch::nn::GroupNorm(torch::nn::GroupNormOptions(
                                   norm_groups(width * 2), width * 2)),
                               torch::nn::ReLU()));
    out4 = register_module(
        "out4", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, export_width, 1)));
    out8 = register_module(
        "out8", torch::nn::Conv2d(torch::nn::Conv2dOptions(width * 2, export_width, 1)));
    sup_head = register_module(
        "sup_head", torch::nn::Conv2d(torch::nn::Conv2dOptions(width, 1, 1)));
}

TemporalOutputs TemporalBranchImpl::forward(const torch::Tensor& pvf_stack) {
    auto x = pvf_stack.dim() == 4 ? pvf_stack.unsqueeze(0) : pvf_stack;
    if (x.dim() != 5 || x.size(1) != frames_) {
        throw ShapeError("temporal branch expects (B,W,3,H,W) with W=" +
                         std::to_string(frames_) + ", got " + shape_str(pvf_stack));
    }
    const auto s = x.size(-1);
    auto stacked = nhwc(x.reshape({x.size(0), frames_ * x.size(2), x.size(3), x.size(4)}));
    auto e4 = enc4->forward(stacked);  // S/4
    auto e8 = enc8->forward(e4);       // S/8
    TemporalOutputs out;
    out.deep_s4 = out4(e4);
    out.deep_s8 = out8(e8);
    out.supervision_logits = resize_to(sup_head(e4), s, s);
    return out;
}

}  // namespace cd
