#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace cd {

// Pixel confusion accumulator; mergeable by fieldwise addition so shards
// can tally independently and combine.
struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;
    std::int64_t tn = 0;

    std::int64_t total() const { return tp + fp + fn + tn; }
    ConfusionCounts& operator+=(const ConfusionCounts& o) {
        tp += o.tp;
        fp += o.fp;
        fn += o.fn;
        tn += o.tn;
        return *this;
    }
    friend ConfusionCounts operator+(ConfusionCounts a, const ConfusionCounts& b) {
        return a += b;
    }
    bool operator==(const ConfusionCounts&) const = default;
};

// Pixel classified positive iff pred >= threshold.
ConfusionCounts confusion(const torch::Tensor& pred, const torch::Tensor& label,
                          double threshold = 0.5);

struct Scores {
    double precision = 0;
    double recall = 0;
    double f1 = 0;
    double iou = 0;
    double oa = 0;
    bool degenerate = false;  // set when any 0/0 ratio was reported as 0
};

Scores scores(const ConfusionCounts& c);

// Aligned text table, percentages with 2 decimals.
std::string format_scores(const Scores& s, const ConfusionCounts& c);
// metric=value per line (percentages, 2 decimals) plus raw counts.
std::string scores_kv(const Scores& s, const ConfusionCounts& c);

}  // namespace cd
