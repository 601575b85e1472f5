#include "cd/config.hpp"

#include <fstream>
#include <sstream>

#include "cd/common.hpp"

namespace cd {

std::string to_string(BackboneSize s) {
    return s == BackboneSize::kTiny ? "tiny" : "paper";
}

std::string to_string(CcrMode m) {
    switch (m) {
        case CcrMode::kCcr: return "ccr";
        case CcrMode::kTemporal: return "temporal";
        default: return "none";
    }
}

std::string to_string(ModelKind k) {
    return k == ModelKind::kTriple ? "triple" : "baseline";
}

ModelConfig ModelConfig::paper() {
    return ModelConfig{};
}

// Narrow preset for CPU-scale training and CI. Widths are reduced beyond a
// plain halving so that a 2000-step run stays within desktop CPU budgets;
// the exported f_pvf width stays at 64 (a fixed interface of the decoder).
ModelConfig ModelConfig::tiny() {
    ModelConfig c;
    c.cnn_widths = {16, 32, 64, 128};
    c.pvt_widths = {16, 32, 80, 128};
    c.pvt_heads = {1, 2, 5, 8};
    c.pvt_mlp_ratios = {4, 4, 4, 4};
    c.scr_widths = {8, 16, 32, 64, 64};
    c.ccr_width = 16;
    c.a_width = 32;
    c.d_width = 32;
    c.dtilde_width = 16;
    c.baseline_widths = {8, 16, 32, 64};
    return c;
}

namespace {

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "on") return true;
    if (v == "false" || v == "0" || v == "off") return false;
    throw ConfigError("config key '" + key + "': expected bool, got '" + v + "'");
}

int parse_int(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        int r = std::stoi(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected int, got '" + v + "'");
    }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        auto r = std::stoull(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected unsigned int, got '" + v + "'");
    }
}

double parse_double(const std::string& key, const std::string& v) {
    try {
        size_t pos = 0;
        double r = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return r;
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': expected number, got '" + v + "'");
    }
}

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::set(const std::string& key, const std::string& value) {
    if (key == "train_manifest") train_manifest = value;
    else if (key == "val_manifest") val_manifest = value;
    else if (key == "model") {
        if (value == "triple") model = ModelKind::kTriple;
        else if (value == "baseline") model = ModelKind::kBaseline;
        else throw ConfigError("config key 'model': expected triple|baseline, got '" + value + "'");
    } else if (key == "backbone") {
        if (value == "tiny") backbone = BackboneSize::kTiny;
        else if (value == "paper") backbone = BackboneSize::kPaper;
        else throw ConfigError("config key 'backbone': expected tiny|paper, got '" + value + "'");
    } else if (key == "tile_size") tile_size = parse_int(key, value);
    else if (key == "batch_size") batch_size = parse_int(key, value);
    else if (key == "lr") lr = parse_double(key, value);
    else if (key == "steps") steps = parse_int(key, value);
    else if (key == "lambda") lambda = parse_double(key, value);
    else if (key == "frames") frames = parse_int(key, value);
    else if (key == "enable_scr") enable_scr = parse_bool(key, value);
    else if (key == "enable_ccr") enable_ccr = parse_bool(key, value);
    else if (key == "ccr_mode") {
        if (value == "ccr") ccr_mode = CcrMode::kCcr;
        else if (value == "temporal") ccr_mode = CcrMode::kTemporal;
        else if (value == "none") ccr_mode = CcrMode::kNone;
        else throw ConfigError("config key 'ccr_mode': expected ccr|temporal|none, got '" + value + "'");
    } else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "checkpoint") checkpoint = value;
    else if (key == "out_dir") out_dir = value;
    else if (key == "log_every") log_every = parse_int(key, value);
    else if (key == "val_every") val_every = parse_int(key, value);
    else if (key == "checkpoint_every") checkpoint_every = parse_int(key, value);
    else if (key == "augment") augment = parse_bool(key, value);
    else if (key == "threshold") threshold = parse_double(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
}

void TrainConfig::apply_override(const std::string& kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must be key=value, got '" + kv + "'");
    }
    set(trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
}

TrainConfig TrainConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    TrainConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(path + ":" + std::to_string(lineno) +
                              ": expected key=value, got '" + line + "'");
        }
        cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return cfg;
}

std::string TrainConfig::to_kv() const {
    std::ostringstream os;
    os << "train_manifest=" << train_manifest << "\n";
    os << "val_manifest=" << val_manifest << "\n";
    os << "model=" << to_string(model) << "\n";
    os << "backbone=" << to_string(backbone) << "\n";
    os << "tile_size=" << tile_size << "\n";
    os << "batch_size=" << batch_size << "\n";
    os << "lr=" << lr << "\n";
    os << "steps=" << steps << "\n";
    os << "lambda=" << lambda << "\n";
    os << "frames=" << frames << "\n";
    os << "enable_scr=" << (enable_scr ? "true" : "false") << "\n";
    os << "enable_ccr=" << (enable_ccr ? "true" : "false") << "\n";
    os << "ccr_mode=" << to_string(ccr_mode) << "\n";
    os << "seed=" << seed << "\n";
    os << "checkpoint=" << checkpoint << "\n";
    os << "out_dir=" << out_dir << "\n";
    os << "log_every=" << log_every << "\n";
    os << "val_every=" << val_every << "\n";
    os << "checkpoint_every=" << checkpoint_every << "\n";
    os << "augment=" << (augment ? "true" : "false") << "\n";
    os << "threshold=" << threshold << "\n";
    return os.str();
}

void TrainConfig::validate() const {
    if (lambda < 0) throw ConfigError("lambda must be >= 0");
    if (enable_ccr && ccr_mode == CcrMode::kNone) {
        throw ConfigError("enable_ccr=true conflicts with ccr_mode=none");
    }
    if (!enable_ccr && ccr_mode != CcrMode::kNone) {
        throw ConfigError("enable_ccr=false requires ccr_mode=none");
    }
    if (enable_ccr && ccr_mode == CcrMode::kCcr && frames < 2) {
        throw ConfigError("frames must be >= 2 when the CCR branch is enabled");
    }
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (steps < 0) throw ConfigError("steps must be >= 0");
    if (tile_size < 32 || tile_size % 32 != 0) {
        throw ConfigError("tile_size must be a positive multiple of 32");
    }
    if (threshold <= 0.0 || threshold >= 1.0) {
        throw ConfigError("threshold must lie in (0,1)");
    }
}

ModelConfig TrainConfig::model_config() const {
    ModelConfig mc = backbone == BackboneSize::kPaper ? ModelConfig::paper()
                                                      : ModelConfig::tiny();
    mc.frames = frames;
    mc.enable_scr = enable_scr;
    mc.ccr_mode = enable_ccr ? ccr_mode : CcrMode::kNone;
    return mc;
}

}  // namespace cd
