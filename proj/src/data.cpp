#include "cd/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "cd/common.hpp"

namespace fs = std::filesystem;

namespace cd {

// ---------------------------------------------------------------- raster I/O

torch::Tensor read_image_png(const std::string& path) {
    cv::Mat bgr = cv::imread(path, cv::IMREAD_COLOR);
    if (bgr.empty()) throw ManifestError("cannot read image: " + path);
    cv::Mat rgb;
    cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
    auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
    return t.permute({2, 0, 1}).to(torch::kFloat32).div_(255.0);
}

torch::Tensor read_mask_png(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_GRAYSCALE);
    if (m.empty()) throw ManifestError("cannot read mask: " + path);
    auto t = torch::from_blob(m.data, {m.rows, m.cols}, torch::kUInt8).clone();
    // binarization threshold 127 on the raw 8-bit mask
    return (t > 127).to(torch::kFloat32);
}

namespace {

cv::Mat tensor_to_bgr8(const torch::Tensor& img) {
    auto hwc = img.detach().clamp(0, 1).mul(255.0).round().to(torch::kUInt8)
                   .permute({1, 2, 0}).contiguous();
    cv::Mat rgb(static_cast<int>(hwc.size(0)), static_cast<int>(hwc.size(1)), CV_8UC3,
                hwc.data_ptr());
    cv::Mat bgr;
    cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
    return bgr;
}

}  // namespace

void write_image_png(const std::string& path, const torch::Tensor& img) {
    if (img.dim() != 3 || img.size(0) != 3) {
        throw ShapeError("write_image_png expects (3,H,W), got " + shape_str(img));
    }
    if (!cv::imwrite(path, tensor_to_bgr8(img))) {
        throw CdError("cannot write image: " + path);
    }
}

void write_gray_png(const std::string& path, const torch::Tensor& map01) {
    if (map01.dim() != 2) {
        throw ShapeError("write_gray_png expects (H,W), got " + shape_str(map01));
    }
    auto u8 = map01.detach().clamp(0, 1).mul(255.0).round().to(torch::kUInt8).contiguous();
    cv::Mat m(static_cast<int>(u8.size(0)), static_cast<int>(u8.size(1)), CV_8UC1,
              u8.data_ptr());
    if (!cv::imwrite(path, m)) {
        throw CdError("cannot write image: " + path);
    }
}

// ------------------------------------------------------------------ manifest

DatasetManifest DatasetManifest::load(const std::string& path, const std::string& split,
                                      int tile_size) {
    std::ifstream in(path);
    if (!in) throw ManifestError("cannot open manifest: " + path);
    DatasetManifest m;
    m.root = fs::path(path).parent_path().string();
    m.split = split;
    m.tile_size = tile_size;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ss(line);
        ManifestEntry e;
        if (!std::getline(ss, e.pre_path, '\t') || !std::getline(ss, e.post_path, '\t') ||
            !std::getline(ss, e.label_path, '\t')) {
            throw ManifestError(path + ":" + std::to_string(lineno) +
                                ": expected pre<TAB>post<TAB>label");
        }
        auto resolve = [&m](std::string& p) {
            if (!p.empty() && !fs::path(p).is_absolute() && !m.root.empty()) {
                p = (fs::path(m.root) / p).string();
            }
        };
        resolve(e.pre_path);
        resolve(e.post_path);
        resolve(e.label_path);
        e.id = fs::path(e.pre_path).stem().string();
        m.entries.push_back(std::move(e));
    }
    return m;
}

void DatasetManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ManifestError("cannot write manifest: " + path);
    auto base = fs::path(path).parent_path();
    for (const auto& e : entries) {
        auto rel = [&base](const std::string& p) {
            std::error_code ec;
            auto r = fs::relative(p, base, ec);
            return ec ? p : r.string();
        };
        out << rel(e.pre_path) << "\t" << rel(e.post_path) << "\t" << rel(e.label_path)
            << "\n";
    }
}

BiTemporalSample load_sample(const ManifestEntry& entry) {
    for (const auto* p : {&entry.pre_path, &entry.post_path, &entry.label_path}) {
        if (!fs::exists(*p)) throw ManifestError("missing file: " + *p);
    }
    BiTemporalSample s;
    s.image_pre = read_image_png(entry.pre_path);
    s.image_post = read_image_png(entry.post_path);
    s.label = read_mask_png(entry.label_path);
    s.id = entry.id;
    if (s.image_pre.sizes() != s.image_post.sizes() ||
        s.image_pre.size(1) != s.label.size(0) || s.image_pre.size(2) != s.label.size(1)) {
        throw GeometryError("size mismatch in entry '" + entry.id + "'");
    }
    return s;
}

// -------------------------------------------------------------------- tiling

std::vector<BiTemporalSample> tile_pair(const BiTemporalSample& sample, int tile_size) {
    const int64_t h = sample.image_pre.size(1);
    const int64_t w = sample.image_pre.size(2);
    if (h < tile_size || w < tile_size) {
        throw DegenerateInputError("image " + sample.id + " (" + std::to_string(h) + "x" +
                                   std::to_string(w) + ") smaller than tile size " +
                                   std::to_string(tile_size));
    }
    std::vector<BiTemporalSample> tiles;
    const int64_t rows = h / tile_size;
    const int64_t cols = w / tile_size;
    tiles.reserve(rows * cols);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t c = 0; c < cols; ++c) {
            const int64_t y = r * tile_size;
            const int64_t x = c * tile_size;
            BiTemporalSample t;
            t.image_pre =
                sample.image_pre.slice(1, y, y + tile_size).slice(2, x, x + tile_size).clone();
            t.image_post =
                sample.image_post.slice(1, y, y + tile_size).slice(2, x, x + tile_size).clone();
            t.label = sample.label.slice(0, y, y + tile_size).slice(1, x, x + tile_size).clone();
            t.id = sample.id + "_r" + std::to_string(r) + "c" + std::to_string(c);
            tiles.push_back(std::move(t));
        }
    }
    return tiles;
}

// -------------------------------------------------------------- augmentation

AugOp aug_op_from_string(const std::string& name) {
    if (name == "identity") return AugOp::kIdentity;
    if (name == "flip_h") return AugOp::kFlipH;
    if (name == "flip_v") return AugOp::kFlipV;
    if (name == "rot90") return AugOp::kRot90;
    if (name == "rot180") return AugOp::kRot180;
    if (name == "rot270") return AugOp::kRot270;
    throw ParameterError("unknown augmentation op: " + name);
}

std::string to_string(AugOp op) {
    switch (op) {
        case AugOp::kIdentity: return "identity";
        case AugOp::kFlipH: return "flip_h";
        case AugOp::kFlipV: return "flip_v";
        case AugOp::kRot90: return "rot90";
        case AugOp::kRot180: return "rot180";
        default: return "rot270";
    }
}

torch::Tensor apply_aug(const torch::Tensor& t, AugOp op) {
    const bool square = t.size(-1) == t.size(-2);
    switch (op) {
        case AugOp::kIdentity: return t.clone();
        case AugOp::kFlipH: return t.flip({-1});
        case AugOp::kFlipV: return t.flip({-2});
        case AugOp::kRot180: return torch::rot90(t, 2, {-2, -1});
        case AugOp::kRot90:
        case AugOp::kRot270:
            if (!square) {
                throw GeometryError("rot90/rot270 require square tiles, got " + shape_str(t));
            }
            return torch::rot90(t, op == AugOp::kRot90 ? 1 : 3, {-2, -1});
    }
    throw ParameterError("unknown augmentation op");
}

BiTemporalSample augment(const BiTemporalSample& sample, AugOp op) {
    BiTemporalSample out;
    out.image_pre = apply_aug(sample.image_pre, op);
    out.image_post = apply_aug(sample.image_post, op);
    out.label = apply_aug(sample.label, op);
    out.id = sample.id;
    return out;
}

// ------------------------------------------------------------ synthetic data

namespace {

// Smooth textured background: a coarse random grid upsampled bilinearly,
// shared verbatim by both epochs of a pair.
torch::Tensor synth_background(std::mt19937_64& rng, int size) {
    std::uniform_real_distribution<float> u(0.15f, 0.85f);
    const int grid = 9;
    auto coarse = torch::empty({3, grid, grid}, torch::kFloat32);
    auto acc = coarse.accessor<float, 3>();
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < grid; ++y)
            for (int x = 0; x < grid; ++x) acc[c][y][x] = u(rng);
    auto bg = resize_to(coarse.unsqueeze(0), size, size).squeeze(0);
    // fine deterministic speckle so flat regions are not exactly constant
    std::uniform_real_distribution<float> s(-0.03f, 0.03f);
    auto noise = torch::empty({size, size}, torch::kFloat32);
    auto nacc = noise.accessor<float, 2>();
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) nacc[y][x] = s(rng);
    bg += noise.unsqueeze(0);
    return bg.clamp_(0.f, 1.f);
}

void draw_rect(torch::Tensor& img, torch::Tensor& mask, std::mt19937_64& rng, int size,
               int64_t max_area) {
    const int min_side = 8;
    int max_side = static_cast<int>(std::sqrt(double(max_area)));
    max_side = std::clamp(max_side, min_side, size / 2);
    std::uniform_int_distribution<int> side(min_side, max_side);
    const int h = side(rng);
    const int w = side(rng);
    std::uniform_int_distribution<int> py(0, size - h);
    std::uniform_int_distribution<int> px(0, size - w);
    const int y = py(rng);
    const int x = px(rng);
    std::uniform_real_distribution<float> u01(0.f, 1.f);
    // keep the object visibly distinct from the mid-gray background band
    float base[3];
    const bool bright = u01(rng) > 0.5f;
    for (float& c : base) c = bright ? 0.82f + 0.15f * u01(rng) : 0.03f + 0.12f * u01(rng);
    auto region = img.slice(1, y, y + h).slice(2, x, x + w);
    for (int c = 0; c < 3; ++c) region[c].fill_(base[c]);
    // darker 1px rim for an object-like outline
    if (h > 4 && w > 4) {
        auto rim = img.slice(1, y, y + h).slice(2, x, x + w);
        auto inner = img.slice(1, y + 1, y + h - 1).slice(2, x + 1, x + w - 1).clone();
        rim.mul_(0.7f);
        img.slice(1, y + 1, y + h - 1).slice(2, x + 1, x + w - 1).copy_(inner);
    }
    mask.slice(0, y, y + h).slice(1, x, x + w).fill_(1.f);
}

// Soft convex-quad shadow multiplied into one image; labeled unchanged.
void draw_shadow(torch::Tensor& img, std::mt19937_64& rng, int size) {
    std::uniform_int_distribution<int> pos(0, size - 1);
    std::uniform_int_distribution<int> ext(size / 6, size / 2);
    std::uniform_real_distribution<float> dark(0.55f, 0.8f);
    const int cx = pos(rng), cy = pos(rng);
    const int rx = ext(rng) / 2, ry = ext(rng) / 2;
    const float k = dark(rng);
    const int y0 = std::max(0, cy - ry), y1 = std::min(size, cy + ry);
    const int x0 = std::max(0, cx - rx), x1 = std::min(size, cx + rx);
    if (y0 >= y1 || x0 >= x1) return;
    auto ys = torch::arange(y0, y1, torch::kFloat32).sub(cy).div(std::max(1, ry));
    auto xs = torch::arange(x0, x1, torch::kFloat32).sub(cx).div(std::max(1, rx));
    auto d2 = ys.pow(2).unsqueeze(1) + xs.pow(2).unsqueeze(0);
    // feathered edge: full shade inside, fading to none at the rim
    auto fade = (1.0f - d2).clamp(0.f, 1.f);
    auto factor = 1.0f - (1.0f - k) * fade;
    img.slice(1, y0, y1).slice(2, x0, x1).mul_(factor.unsqueeze(0));
}

}  // namespace

DatasetManifest synth_dataset(const SynthOptions& opt, const std::string& out_dir) {
    if (opt.size < 64) throw ParameterError("synth size must be >= 64");
    if (opt.change_rate <= 0.0 || opt.change_rate >= 1.0) {
        throw ParameterError("change_rate must lie in (0,1)");
    }
    for (const char* sub : {"A", "B", "label"}) {
        fs::create_directories(fs::path(out_dir) / sub);
    }

    DatasetManifest m;
    m.root = out_dir;
    m.tile_size = opt.size;

    const int64_t target = std::llround(opt.change_rate * opt.size * opt.size);
    for (int i = 0; i < opt.n_samples; ++i) {
        std::seed_seq seq{static_cast<std::uint32_t>(opt.seed),
                          static_cast<std::uint32_t>(opt.seed >> 32),
                          static_cast<std::uint32_t>(i), std::uint32_t{0x9e3779b9}};
        std::mt19937_64 rng(seq);

        auto bg = synth_background(rng, opt.size);
        auto pre = bg.clone();
        auto post = bg.clone();
        auto label = torch::zeros({opt.size, opt.size}, torch::kFloat32);

        // semantic change: rectangles inserted into or removed from the scene.
        // Stop once the labeled area reaches 0.8*target; capping each rectangle
        // at the remaining headroom keeps every label within +-45% of target.
        std::uniform_int_distribution<int> coin(0, 1);
        const int64_t max_rect_area = std::max<int64_t>(81, target * 3 / 10);
        while (target >= 81) {
            const auto area = static_cast<int64_t>(label.sum().item<double>());
            if (area >= std::llround(0.8 * double(target))) break;
            const int64_t headroom = std::llround(1.45 * double(target)) - area;
            if (headroom < 64) break;
            auto& img = coin(rng) ? post : pre;  // insert vs remove
            draw_rect(img, label, rng, opt.size, std::min(max_rect_area, headroom));
        }

        // non-semantic change applied to one epoch only
        std::uniform_real_distribution<float> bshift(-0.15f, 0.15f);
        auto& shifted = coin(rng) ? post : pre;
        shifted = shifted.mul(1.0f + bshift(rng)).clamp(0.f, 1.f);
        const int n_shadows = 1 + coin(rng);
        auto& shadowed = coin(rng) ? post : pre;
        for (int s = 0; s < n_shadows; ++s) draw_shadow(shadowed, rng, opt.size);

        char id[16];
        std::snprintf(id, sizeof(id), "%05d", i);
        ManifestEntry e;
        e.id = id;
        e.pre_path = (fs::path(out_dir) / "A" / (std::string(id) + ".png")).string();
        e.post_path = (fs::path(out_dir) / "B" / (std::string(id) + ".png")).string();
        e.label_path = (fs::path(out_dir) / "label" / (std::string(id) + ".png")).string();
        write_image_png(e.pre_path, pre);
        write_image_png(e.post_path, post);
        write_gray_png(e.label_path, label);
        m.entries.push_back(std::move(e));
    }
    m.save((fs::path(out_dir) / "manifest.txt").string());
    return m;
}

}  // namespace cd
