#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cd {

enum class BackboneSize { kTiny, kPaper };
enum class CcrMode { kCcr, kTemporal, kNone };
enum class ModelKind { kTriple, kBaseline };

std::string to_string(BackboneSize s);
std::string to_string(CcrMode m);
std::string to_string(ModelKind k);

// Structural hyperparameters of the network, derived from TrainConfig.
struct ModelConfig {
    // CNN branch (ResNet18-style), strides 4/8/16/32.
    std::array<int, 4> cnn_widths{64, 128, 256, 512};
    // Transformer branch (PVTv2-B1-style), strides 4/8/16/32.
    std::array<int, 4> pvt_widths{64, 128, 320, 512};
    std::array<int, 4> pvt_heads{1, 2, 5, 8};
    std::array<int, 4> pvt_depths{2, 2, 2, 2};
    std::array<int, 4> pvt_sr_ratios{8, 4, 2, 1};
    std::array<int, 4> pvt_mlp_ratios{8, 8, 4, 4};
    // SCR branch, five serial stages at strides 1/2/4/8/16.
    std::array<int, 5> scr_widths{32, 64, 128, 256, 256};
    int swin_window = 8;
    int swin_heads = 4;
    // CCR branch over pseudo video frames.
    int ccr_width = 64;
    int frames = 4;
    int pvf_export_width = 64;  // channel width of f_pvf_1 / f_pvf_2
    // Fusion / decoder widths.
    int a_width = 64;       // the nine activation maps
    int d_width = 64;       // merged D_j
    int dtilde_width = 64;  // refined decoder features
    // Baseline siamese encoder widths (pluggability experiments).
    std::array<int, 4> baseline_widths{16, 32, 64, 128};

    bool enable_scr = true;
    CcrMode ccr_mode = CcrMode::kCcr;

    static ModelConfig paper();
    static ModelConfig tiny();
};

// Declarative training configuration, read from a key=value file with
// optional --set key=value overrides. Unknown keys are rejected.
struct TrainConfig {
    std::string train_manifest;
    std::string val_manifest;
    ModelKind model = ModelKind::kTriple;
    BackboneSize backbone = BackboneSize::kTiny;
    int tile_size = 128;
    int batch_size = 4;
    double lr = 1e-4;
    int steps = 2000;
    double lambda = 0.5;
    int frames = 4;
    bool enable_scr = true;
    bool enable_ccr = true;
    CcrMode ccr_mode = CcrMode::kCcr;
    std::uint64_t seed = 7;
    std::string checkpoint = "checkpoint.cdckpt";
    std::string out_dir = ".";
    int log_every = 1;
    int val_every = 100;
    int checkpoint_every = 0;  // 0 = final only
    bool augment = true;
    double threshold = 0.5;

    static TrainConfig from_file(const std::string& path);
    // Applies one "key=value" override with type checking.
    void apply_override(const std::string& kv);
    void set(const std::string& key, const std::string& value);
    // Serializes every key back to the declarative format.
    std::string to_kv() const;
    // Cross-field checks (frames >= 2 when CCR enabled, lambda >= 0, ...).
    void validate() const;

    ModelConfig model_config() const;
};

}  // namespace cd
