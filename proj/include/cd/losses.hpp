#pragma once

#include <optional>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace cd {

inline constexpr double kProbEps = 1e-7;  // clamp for log stability

// Per-pixel-mean binary cross entropy; pred holds probabilities.
torch::Tensor bce_loss(const torch::Tensor& pred, const torch::Tensor& label);

// 1 - (2*sum(label*pred)+sigma)/(sum(label)+sum(pred)+sigma), whole-map sums.
torch::Tensor dice_loss(const torch::Tensor& pred, const torch::Tensor& label,
                        double sigma = 1.0);

struct LossReport {
    struct Head {
        double bce = 0;
        double dice = 0;
    };
    std::vector<Head> per_head;  // three decoder heads, then the CCR head if present
    double total = 0;

    std::string log_line(std::int64_t step) const;
};

// Deep-supervised total: mean over heads of (bce + lambda*dice). The CCR head
// participates when given; otherwise the mean runs over the three decoder heads.
std::pair<torch::Tensor, LossReport> total_loss(
    const std::vector<torch::Tensor>& head_probs,
    const std::optional<torch::Tensor>& ccr_prob, const torch::Tensor& label,
    double lambda = 0.5, double sigma = 1.0);

}  // namespace cd
