#include "cd/metrics.hpp"

#include <cstdio>

#include "cd/common.hpp"

namespace cd {

ConfusionCounts confusion(const torch::Tensor& pred, const torch::Tensor& label,
                          double threshold) {
    if (pred.sizes() != label.sizes()) {
        throw ShapeError("confusion: pred " + shape_str(pred) + " vs label " +
                         shape_str(label));
    }
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw ParameterError("confusion threshold must lie in (0,1)");
    }
    auto p = (pred.detach() >= threshold);
    auto l = (label.detach() >= 0.5);
    ConfusionCounts c;
    c.tp = (p & l).sum().item<std::int64_t>();
    c.fp = (p & ~l).sum().item<std::int64_t>();
    c.fn = (~p & l).sum().item<std::int64_t>();
    c.tn = (~p & ~l).sum().item<std::int64_t>();
    return c;
}

namespace {
double ratio(std::int64_t num, std::int64_t den, bool& degenerate) {
    if (den == 0) {
        if (num != 0) throw NumericsError("invalid confusion counts");
        degenerate = true;
        return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
}
}  // namespace

Scores scores(const ConfusionCounts& c) {
    if (c.total() <= 0) throw DegenerateInputError("scores: empty confusion counts");
    Scores s;
    s.precision = ratio(c.tp, c.tp + c.fp, s.degenerate);
    s.recall = ratio(c.tp, c.tp + c.fn, s.degenerate);
    if (s.precision + s.recall > 0) {
        s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
    } else {
        s.degenerate = s.degenerate || (c.tp + c.fp + c.fn > 0);
        s.f1 = 0.0;
    }
    s.iou = ratio(c.tp, c.tp + c.fp + c.fn, s.degenerate);
    s.oa = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
    return s;
}

std::string format_scores(const Scores& s, const ConfusionCounts& c) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "  Pre.     Rec.     F1       IoU      OA\n"
                  "  %6.2f   %6.2f   %6.2f   %6.2f   %6.2f%s\n"
                  "  tp=%lld fp=%lld fn=%lld tn=%lld\n",
                  100.0 * s.precision, 100.0 * s.recall, 100.0 * s.f1, 100.0 * s.iou,
                  100.0 * s.oa, s.degenerate ? "   (degenerate: 0/0 reported as 0)" : "",
                  static_cast<long long>(c.tp), static_cast<long long>(c.fp),
                  static_cast<long long>(c.fn), static_cast<long long>(c.tn));
    return buf;
}

std::string scores_kv(const Scores& s, const ConfusionCounts& c) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "precision=%.2f\nrecall=%.2f\nf1=%.2f\niou=%.2f\noa=%.2f\n"
                  "degenerate=%d\ntp=%lld\nfp=%lld\nfn=%lld\ntn=%lld\n",
                  100.0 * s.precision, 100.0 * s.recall, 100.0 * s.f1, 100.0 * s.iou,
                  100.0 * s.oa, s.degenerate ? 1 : 0, static_cast<long long>(c.tp),
                  static_cast<long long>(c.fp), static_cast<long long>(c.fn),
                  static_cast<long long>(c.tn));
    return buf;
}

}  // namespace cd
