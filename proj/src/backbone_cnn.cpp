#include "cd/backbone.hpp"
#include "cd/common.hpp"

namespace cd {

ConvUnitImpl::ConvUnitImpl(int in_ch, int out_ch, int stride) {
    conv = register_module(
        "conv",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(in_ch, out_ch, 3).stride(stride).padding(1)));
    norm = register_module(
        "norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(out_ch), out_ch)));
}

torch::Tensor ConvUnitImpl::forward(const torch::Tensor& x) {
    return torch::relu(norm(conv(x)));
}

BasicBlockImpl::BasicBlockImpl(int in_ch, int out_ch, int stride) {
    conv1 = register_module(
        "conv1",
        torch::nn::Conv2d(
            torch::nn::Conv2dOptions(in_ch, out_ch, 3).stride(stride).padding(1).bias(false)));
    norm1 = register_module(
        "norm1", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(out_ch), out_ch)));
    conv2 = register_module(
        "conv2",
        torch::nn::Conv2d(torch::nn::Conv2dOptions(out_ch, out_ch, 3).padding(1).bias(false)));
    norm2 = register_module(
        "norm2", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(out_ch), out_ch)));
    if (stride != 1 || in_ch != out_ch) {
        downsample = register_module(
            "downsample",
            torch::nn::Sequential(
                torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(in_ch, out_ch, 1).stride(stride).bias(false)),
                torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(out_ch), out_ch))));
    }
}

torch::Tensor BasicBlockImpl::forward(const torch::Tensor& x) {
    auto out = torch::relu(norm1(conv1(x)));
    out = norm2(conv2(out));
    auto skip = downsample ? downsample->forward(x) : x;
    return torch::relu(out + skip);
}

CnnBranchImpl::CnnBranchImpl(const std::array<int, 4>& w) {
    stem = register_module(
        "stem", torch::nn::Conv2d(
                    torch::nn::Conv2dOptions(3, w[0], 7).stride(2).padding(3).bias(false)));
    stem_norm = register_module(
        "stem_norm", torch::nn::GroupNorm(torch::nn::GroupNormOptions(norm_groups(w[0]), w[0])));
    auto layer = [](int in_ch, int out_ch, int stride) {
        return torch::nn::Sequential(BasicBlock(in_ch, out_ch, stride),
                                     BasicBlock(out_ch, out_ch, 1));
    };
    layer1 = register_module("layer1", layer(w[0], w[0], 1));
    layer2 = register_module("layer2", layer(w[0], w[1], 2));
    layer3 = register_module("layer3", layer(w[1], w[2], 2));
    layer4 = register_module("layer4", layer(w[2], w[3], 2));
}

std::vector<torch::Tensor> CnnBranchImpl::forward(const torch::Tensor& image) {
    if (image.size(-1) % 32 != 0 || image.size(-2) % 32 != 0) {
        throw ShapeError("CNN branch requires sides divisible by 32, got " +
                         shape_str(image));
    }
    auto x = torch::relu(stem_norm(stem(image)));
    x = torch::max_pool2d(x, 3, 2, 1);
    auto c1 = layer1->forward(x);
    auto c2 = layer2->forward(c1);
    auto c3 = layer3->forward(c2);
    auto c4 = layer4->forward(c3);
    return {c1, c2, c3, c4};
}

}  // namespace cd
