#pragma once

#include <stdexcept>
#include <string>

#include <torch/torch.h>

namespace cd {

// Base class for all toolkit errors. Subclasses map to CLI exit codes:
// ConfigError -> 2, NumericsError -> 3, everything else -> 1.
struct CdError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ConfigError : CdError {
    using CdError::CdError;
};
struct CompatibilityError : ConfigError {
    using ConfigError::ConfigError;
};
struct ManifestError : CdError {
    using CdError::CdError;
};
struct GeometryError : CdError {
    using CdError::CdError;
};
struct ShapeError : CdError {
    using CdError::CdError;
};
struct ParameterError : CdError {
    using CdError::CdError;
};
struct ArityError : CdError {
    using CdError::CdError;
};
struct DegenerateInputError : CdError {
    using CdError::CdError;
};
struct NumericsError : CdError {
    using CdError::CdError;
};

// Group count for GroupNorm given a channel width.
inline int64_t norm_groups(int64_t channels) {
    if (channels % 8 == 0 && channels >= 32) return 8;
    if (channels % 4 == 0 && channels >= 8) return 4;
    if (channels % 2 == 0) return 2;
    return 1;
}

// NHWC layout for the CPU conv fast path.
inline torch::Tensor nhwc(const torch::Tensor& x) {
    return x.contiguous(torch::MemoryFormat::ChannelsLast);
}

// Moves every 4-D parameter of a module to channels_last storage. Call once
// after construction (and before optimizer setup) for CPU throughput.
inline void to_channels_last(torch::nn::Module& m) {
    torch::NoGradGuard guard;
    for (auto& p : m.parameters()) {
        if (p.dim() == 4) p.set_data(p.contiguous(torch::MemoryFormat::ChannelsLast));
    }
}

// 2x bilinear upsampling (align_corners=false).
inline torch::Tensor up2(const torch::Tensor& x) {
    namespace F = torch::nn::functional;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .scale_factor(std::vector<double>{2.0, 2.0})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

// Bilinear resize to an exact spatial size.
inline torch::Tensor resize_to(const torch::Tensor& x, int64_t h, int64_t w) {
    namespace F = torch::nn::functional;
    if (x.size(-2) == h && x.size(-1) == w) return x;
    return F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<int64_t>{h, w})
                                 .mode(torch::kBilinear)
                                 .align_corners(false));
}

inline std::string shape_str(const torch::Tensor& t) {
    std::string s = "(";
    for (int64_t i = 0; i < t.dim(); ++i) {
        if (i) s += ",";
        s += std::to_string(t.size(i));
    }
    return s + ")";
}

inline void check_same_spatial(const torch::Tensor& a, const torch::Tensor& b,
                               const std::string& what) {
    if (a.size(-2) != b.size(-2) || a.size(-1) != b.size(-1)) {
        throw ShapeError("spatial size mismatch for " + what + ": " + shape_str(a) +
                         " vs " + shape_str(b));
    }
}

}  // namespace cd
