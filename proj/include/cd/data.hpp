#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace cd {

// Co-registered image pair with a binary change label.
// Images are (3,H,W) float32 in [0,1]; label is (H,W) float32 in {0,1}.
struct BiTemporalSample {
    torch::Tensor image_pre;
    torch::Tensor image_post;
    torch::Tensor label;
    std::string id;
};

struct ManifestEntry {
    std::string pre_path;
    std::string post_path;
    std::string label_path;
    std::string id;
};

struct DatasetManifest {
    std::string root;  // directory the entry paths are resolved against
    std::string split = "train";
    std::vector<ManifestEntry> entries;
    int tile_size = 256;

    // Reads a line-oriented "pre<TAB>post<TAB>label" file; relative paths are
    // resolved against the manifest's directory.
    static DatasetManifest load(const std::string& path, const std::string& split = "train",
                                int tile_size = 256);
    void save(const std::string& path) const;
};

BiTemporalSample load_sample(const ManifestEntry& entry);

// Non-overlapping row-major tiles; trailing remainders are discarded.
std::vector<BiTemporalSample> tile_pair(const BiTemporalSample& sample, int tile_size);

enum class AugOp { kIdentity, kFlipH, kFlipV, kRot90, kRot180, kRot270 };

AugOp aug_op_from_string(const std::string& name);
std::string to_string(AugOp op);

// Applies the geometric transform to one raster (last two dims are spatial).
torch::Tensor apply_aug(const torch::Tensor& t, AugOp op);

// Applies the same transform to image_pre, image_post and label.
BiTemporalSample augment(const BiTemporalSample& sample, AugOp op);

struct SynthOptions {
    std::uint64_t seed = 7;
    int n_samples = 16;
    int size = 256;
    double change_rate = 0.08;
};

// Writes root/{A,B,label}/<id>.png plus root/manifest.txt and returns the
// manifest. Deterministic: identical options produce identical bytes.
DatasetManifest synth_dataset(const SynthOptions& opt, const std::string& out_dir);

// ---- raster I/O helpers (8-bit PNG <-> float tensors) ----

torch::Tensor read_image_png(const std::string& path);        // (3,H,W) in [0,1]
torch::Tensor read_mask_png(const std::string& path);         // (H,W) in {0,1}
void write_image_png(const std::string& path, const torch::Tensor& img);   // (3,H,W)
void write_gray_png(const std::string& path, const torch::Tensor& map01);  // (H,W)

}  // namespace cd
