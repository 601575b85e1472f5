#include "cd/losses.hpp"

#include <cstdio>

#include "cd/common.hpp"

namespace cd {

torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& label) {
    if (pred.sizes() != label.sizes()) {
        throw ShapeError("bce_loss: pred " + shape_str(pred) + " vs label " +
                         shape_str(label));
    }
    auto p = pred.clamp(kProbEps, 1.0 - kProbEps);
    return -(label * torch::log(p) + (1.0 - label) * torch::log(1.0 - p)).mean();
}

torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& label,
                        double sigma) {
    if (pred.sizes() != label.sizes()) {
        throw ShapeError("dice_loss: pred " + shape_str(pred) + " vs label " +
                         shape_str(label));
    }
    if (sigma <= 0.0) throw ParameterError("dice sigma must be > 0");
    auto inter = (label * pred).sum();
    auto denom = label.sum() + pred.sum() + sigma;
    return 1.0 - (2.0 * inter + sigma) / denom;
}

std::pair<torch::Tensor, LossReport> total_loss(
    const std::vector<torch::Tensor>& head_probs,
    const std::optional<torch::Tensor>& ccr_prob, const torch::Tensor& label,
    double lambda, double sigma) {
    if (head_probs.size() != 3) {
        throw ArityError("total_loss expects exactly 3 decoder heads, got " +
                         std::to_string(head_probs.size()));
    }
    std::vector<torch::Tensor> heads = head_probs;
    if (ccr_prob) heads.push_back(*ccr_prob);

    LossReport report;
    torch::Tensor sum;
    for (const auto& h : heads) {
        auto b = bce_loss(h, label);
        auto d = dice_loss(h, label, sigma);
        report.per_head.push_back({b.item<double>(), d.item<double>()});
        auto term = b + lambda * d;
        sum = sum.defined() ? sum + term : term;
    }
    auto total = sum / static_cast<double>(heads.size());
    report.total = total.item<double>();
    return {total, report};
}

std::string LossReport::log_line(std::int64_t step) const {
    char buf[512];
    int n = std::snprintf(buf, sizeof(buf), "step=%lld total=%.6f",
                          static_cast<long long>(step), total);
    for (size_t i = 0; i < per_head.size(); ++i) {
        n += std::snprintf(buf + n, sizeof(buf) - n, " h%zu_bce=%.6f h%zu_dice=%.6f",
                           i + 1, per_head[i].bce, i + 1, per_head[i].dice);
    }
    return std::string(buf, n);
}

}  // namespace cd
