#pragma once

#include <cstdint>
#include <string>

#include <torch/torch.h>

namespace cd {

// Single-file checkpoint archive: a config snapshot, the step counter, every
// named parameter/buffer blob, and Adam moment state. Byte-stable: saving,
// loading and saving again yields identical files.
struct CheckpointMeta {
    std::uint64_t step = 0;
    std::string config_kv;
};

void save_checkpoint(const std::string& path, const torch::nn::Module& model,
                     const torch::optim::Adam* optimizer, std::uint64_t step,
                     const std::string& config_kv);

// Restores tensors into the (already constructed) model; optimizer may be
// null when only inference is needed. Names must match exactly.
CheckpointMeta load_checkpoint(const std::string& path, torch::nn::Module& model,
                               torch::optim::Adam* optimizer);

// Reads only the header and config snapshot.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace cd
