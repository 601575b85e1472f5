#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "cd/config.hpp"
#include "cd/data.hpp"
#include "cd/losses.hpp"
#include "cd/metrics.hpp"
#include "cd/model.hpp"

namespace cd {

// Loads every manifest entry up front (tiling larger rasters) and serves
// seeded shuffled batches. Immutable after construction.
class SampleCache {
public:
    SampleCache(const DatasetManifest& manifest, int tile_size);
    const std::vector<BiTemporalSample>& tiles() const { return tiles_; }
    size_t size() const { return tiles_.size(); }

private:
    std::vector<BiTemporalSample> tiles_;
};

struct Batch {
    torch::Tensor pre;    // (B,3,S,S)
    torch::Tensor post;   // (B,3,S,S)
    torch::Tensor label;  // (B,S,S)
    std::vector<std::string> ids;
};

// Deep-supervised loss for any detector output: mean over present heads of
// bce + lambda*dice. Triple nets contribute three decoder heads (+ optional
// aux), the baseline its single head (+ optional aux).
std::pair<torch::Tensor, LossReport> supervised_loss(const ForwardResult& result,
                                                     const torch::Tensor& label,
                                                     double lambda, double sigma = 1.0);

struct TrainOutcome {
    std::uint64_t steps = 0;
    std::string checkpoint_path;
    std::vector<double> loss_curve;
};

// Runs the full training loop: seeded init, Adam updates, per-step loss log,
// periodic validation, checkpointing. Throws NumericsError on non-finite loss.
TrainOutcome train(const TrainConfig& cfg, std::ostream& log);

struct EvalOutcome {
    Scores scores;
    ConfusionCounts counts;
};

EvalOutcome evaluate_model(ChangeDetectorImpl& model, const SampleCache& cache,
                           int batch_size, double threshold);

// Loads a checkpoint (architecture taken from its config snapshot, checked
// against overrides) and evaluates the manifest split.
EvalOutcome evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                     const std::optional<TrainConfig>& override_cfg, std::ostream& log);

struct InferOutcome {
    torch::Tensor change_map;              // (H,W) probabilities
    std::optional<torch::Tensor> colored;  // (3,H,W) TP/TN/FP/FN palette
};

InferOutcome infer(const std::string& checkpoint_path, const std::string& pre_path,
                   const std::string& post_path, const std::optional<std::string>& label_path,
                   const std::string& out_dir, bool dump_features = false);

struct AblateRow {
    std::string name;
    bool scr = false;
    CcrMode ccr_mode = CcrMode::kNone;
    int frames = 0;
    std::int64_t params = 0;
    Scores scores;
    ConfusionCounts counts;
};

// Runs the overall-network grid (SCR/CCR on-off) and the frame-count study,
// returning one row per distinct cell.
std::vector<AblateRow> ablate(const TrainConfig& base, bool grid_scr, bool grid_ccr,
                              const std::vector<int>& frames_list, std::ostream& log);

std::string format_ablation_table(const std::vector<AblateRow>& rows);

}  // namespace cd
