#include "cd/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "cd/checkpoint.hpp"
#include "cd/common.hpp"
#include "cd/pvf.hpp"

namespace fs = std::filesystem;

namespace cd {

// ------------------------------------------------------------- SampleCache

SampleCache::SampleCache(const DatasetManifest& manifest, int tile_size) {
    if (manifest.entries.empty()) {
        throw DegenerateInputError("manifest has no entries (split '" + manifest.split +
                                   "')");
    }
    for (const auto& entry : manifest.entries) {
        auto sample = load_sample(entry);
        if (sample.image_pre.size(1) == tile_size && sample.image_pre.size(2) == tile_size) {
            tiles_.push_back(std::move(sample));
        } else {
            for (auto& t : tile_pair(sample, tile_size)) tiles_.push_back(std::move(t));
        }
    }
}

namespace {

Batch make_batch(const std::vector<BiTemporalSample>& tiles,
                 const std::vector<size_t>& indices) {
    std::vector<torch::Tensor> pre, post, label;
    Batch b;
    for (auto i : indices) {
        pre.push_back(tiles[i].image_pre);
        post.push_back(tiles[i].image_post);
        label.push_back(tiles[i].label);
        b.ids.push_back(tiles[i].id);
    }
    b.pre = torch::stack(pre);
    b.post = torch::stack(post);
    b.label = torch::stack(label);
    return b;
}

Batch augment_batch(const Batch& b, std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick(0, 5);
    Batch out;
    out.ids = b.ids;
    std::vector<torch::Tensor> pre, post, label;
    for (int64_t i = 0; i < b.pre.size(0); ++i) {
        const auto op = static_cast<AugOp>(pick(rng));
        pre.push_back(apply_aug(b.pre[i], op));
        post.push_back(apply_aug(b.post[i], op));
        label.push_back(apply_aug(b.label[i], op));
    }
    out.pre = torch::stack(pre);
    out.post = torch::stack(post);
    out.label = torch::stack(label);
    return out;
}

std::string resolve_out(const std::string& out_dir, const std::string& path) {
    fs::path p(path);
    if (p.is_absolute()) return path;
    return (fs::path(out_dir) / p).string();
}

}  // namespace

// ---------------------------------------------------------------- losses

std::pair<torch::Tensor, LossReport> supervised_loss(const ForwardResult& result,
                                                     const torch::Tensor& label,
                                                     double lambda, double sigma) {
    if (result.head_probs.size() == 3) {
        return total_loss(result.head_probs, result.aux_prob, label, lambda, sigma);
    }
    std::vector<torch::Tensor> heads = result.head_probs;
    if (result.aux_prob) heads.push_back(*result.aux_prob);
    LossReport report;
    torch::Tensor sum;
    for (const auto& h : heads) {
        auto b = bce_loss(h, label);
        auto d = dice_loss(h, label, sigma);
        report.per_head.push_back({b.item<double>(), d.item<double>()});
        auto term = b + lambda * d;
        sum = sum.defined() ? sum + term : term;
    }
    auto total = sum / static_cast<double>(heads.size());
    report.total = total.item<double>();
    return {total, report};
}

// ---------------------------------------------------------------- evaluate

EvalOutcome evaluate_model(ChangeDetectorImpl& model, const SampleCache& cache,
                           int batch_size, double threshold) {
    torch::NoGradGuard guard;
    model.eval();
    ConfusionCounts counts;
    const auto& tiles = cache.tiles();
    for (size_t i = 0; i < tiles.size(); i += batch_size) {
        std::vector<size_t> idx;
        for (size_t j = i; j < std::min(tiles.size(), i + batch_size); ++j) idx.push_back(j);
        auto batch = make_batch(tiles, idx);
        auto r = model.detect(batch.pre, batch.post);
        counts += confusion(r.cm, batch.label, threshold);
    }
    model.train();
    return EvalOutcome{scores(counts), counts};
}

// ------------------------------------------------------------------- train

TrainOutcome train(const TrainConfig& cfg, std::ostream& log) {
    cfg.validate();
    if (cfg.train_manifest.empty()) throw ConfigError("train_manifest is required");
    fs::create_directories(cfg.out_dir);

    torch::manual_seed(static_cast<std::int64_t>(cfg.seed));
    auto model = build_model(cfg);

    SampleCache train_cache(DatasetManifest::load(cfg.train_manifest, "train", cfg.tile_size),
                            cfg.tile_size);
    std::optional<SampleCache> val_cache;
    if (!cfg.val_manifest.empty()) {
        val_cache.emplace(DatasetManifest::load(cfg.val_manifest, "val", cfg.tile_size),
                          cfg.tile_size);
    }

    torch::optim::Adam optimizer(model->parameters(),
                                 torch::optim::AdamOptions(cfg.lr));

    std::ofstream train_log(resolve_out(cfg.out_dir, "train.log"), std::ios::trunc);
    auto log_line = [&](const std::string& line) {
        train_log << line << "\n";
        log << line << "\n";
    };
    log_line("config_begin");
    {
        std::istringstream kv(cfg.to_kv());
        std::string l;
        while (std::getline(kv, l)) log_line("  " + l);
    }
    log_line("config_end");
    log_line("train_tiles=" + std::to_string(train_cache.size()) +
             " params=" + std::to_string(parameter_count(*model)));

    std::mt19937_64 order_rng(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);
    std::mt19937_64 aug_rng(cfg.seed * 0xbf58476d1ce4e5b9ULL + 2);
    std::vector<size_t> order(train_cache.size());
    std::iota(order.begin(), order.end(), size_t{0});
    size_t cursor = order.size();  // trigger shuffle on first use

    model->train();
    TrainOutcome outcome;
    const std::string ckpt_path = resolve_out(cfg.out_dir, cfg.checkpoint);
    for (int step = 1; step <= cfg.steps; ++step) {
        std::vector<size_t> idx;
        for (int k = 0; k < cfg.batch_size; ++k) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), order_rng);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }
        auto batch = make_batch(train_cache.tiles(), idx);
        if (cfg.augment) batch = augment_batch(batch, aug_rng);

        optimizer.zero_grad();
        auto result = model->detect(batch.pre, batch.post);
        auto [loss, report] = supervised_loss(result, batch.label, cfg.lambda);
        if (!std::isfinite(report.total)) {
            std::string ids;
            for (const auto& id : batch.ids) ids += id + " ";
            log_line("abort: non-finite loss at step " + std::to_string(step) +
                     ", batch ids: " + ids);
            throw NumericsError("non-finite loss at step " + std::to_string(step) +
                                " (batch: " + ids + ")");
        }
        loss.backward();
        optimizer.step();

        outcome.loss_curve.push_back(report.total);
        if (cfg.log_every > 0 && step % cfg.log_every == 0) {
            log_line(report.log_line(step));
        }
        if (val_cache && cfg.val_every > 0 && step % cfg.val_every == 0) {
            auto ev = evaluate_model(*model, *val_cache, cfg.batch_size, cfg.threshold);
            char buf[160];
            std::snprintf(buf, sizeof(buf), "val step=%d f1=%.4f iou=%.4f oa=%.4f", step,
                          ev.scores.f1, ev.scores.iou, ev.scores.oa);
            log_line(buf);
        }
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
            save_checkpoint(ckpt_path, *model, &optimizer, step, cfg.to_kv());
        }
    }

    save_checkpoint(ckpt_path, *model, &optimizer, cfg.steps, cfg.to_kv());
    outcome.steps = cfg.steps;
    outcome.checkpoint_path = ckpt_path;
    log_line("checkpoint=" + ckpt_path);
    return outcome;
}

// ---------------------------------------------------- checkpointed evaluate

namespace {

// Architecture-defining keys must agree between a checkpoint snapshot and any
// user-provided config.
void check_compatible(const TrainConfig& snapshot, const TrainConfig& given) {
    if (snapshot.model != given.model || snapshot.backbone != given.backbone ||
        snapshot.frames != given.frames || snapshot.enable_scr != given.enable_scr ||
        snapshot.enable_ccr != given.enable_ccr || snapshot.ccr_mode != given.ccr_mode) {
        throw CompatibilityError(
            "checkpoint architecture (model=" + to_string(snapshot.model) +
            " backbone=" + to_string(snapshot.backbone) +
            " frames=" + std::to_string(snapshot.frames) + " scr=" +
            (snapshot.enable_scr ? "on" : "off") + " ccr=" + to_string(snapshot.ccr_mode) +
            ") does not match the given config");
    }
}

TrainConfig config_from_snapshot(const std::string& kv) {
    TrainConfig cfg;
    std::istringstream ss(kv);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty()) continue;
        cfg.apply_override(line);
    }
    return cfg;
}

}  // namespace

EvalOutcome evaluate(const std::string& checkpoint_path, const std::string& manifest_path,
                     const std::optional<TrainConfig>& override_cfg, std::ostream& log) {
    auto meta = peek_checkpoint(checkpoint_path);
    auto cfg = config_from_snapshot(meta.config_kv);
    if (override_cfg) {
        check_compatible(cfg, *override_cfg);
        cfg.threshold = override_cfg->threshold;
        cfg.batch_size = override_cfg->batch_size;
        cfg.tile_size = override_cfg->tile_size;
    }
    auto model = build_model(cfg);
    load_checkpoint(checkpoint_path, *model, nullptr);

    SampleCache cache(DatasetManifest::load(manifest_path, "eval", cfg.tile_size),
                      cfg.tile_size);
    auto outcome = evaluate_model(*model, cache, cfg.batch_size, cfg.threshold);
    log << format_scores(outcome.scores, outcome.counts);
    return outcome;
}

// -------------------------------------------------------------------- infer

namespace {

// Fig-4 style palette: TP white, TN black, FP green, FN red.
torch::Tensor colorize(const torch::Tensor& pred_bin, const torch::Tensor& label) {
    auto p = pred_bin.to(torch::kBool);
    auto l = label.to(torch::kBool);
    auto h = p.size(0), w = p.size(1);
    auto img = torch::zeros({3, h, w}, torch::kFloat32);
    auto tp = (p & l).to(torch::kFloat32);
    auto fp = (p & ~l).to(torch::kFloat32);
    auto fn = (~p & l).to(torch::kFloat32);
    img[0] = tp + fn;  // red channel: TP(white) + FN(red)
    img[1] = tp + fp;  // green channel: TP(white) + FP(green)
    img[2] = tp;       // blue channel: TP(white)
    return img;
}

void dump_feature_grid(const std::string& path, const torch::Tensor& fmap) {
    // channel-mean heat map normalized to [0,1]
    auto m = fmap.detach().mean(0);
    auto lo = m.min();
    auto hi = m.max();
    auto norm = (m - lo) / torch::clamp_min(hi - lo, 1e-12);
    write_gray_png(path, norm);
}

}  // namespace

InferOutcome infer(const std::string& checkpoint_path, const std::string& pre_path,
                   const std::string& post_path, const std::optional<std::string>& label_path,
                   const std::string& out_dir, bool dump_features) {
    auto meta = peek_checkpoint(checkpoint_path);
    auto cfg = config_from_snapshot(meta.config_kv);
    auto model = build_model(cfg);
    load_checkpoint(checkpoint_path, *model, nullptr);
    model->eval();

    BiTemporalSample sample;
    sample.image_pre = read_image_png(pre_path);
    sample.image_post = read_image_png(post_path);
    if (sample.image_pre.sizes() != sample.image_post.sizes()) {
        throw GeometryError("infer: image geometry mismatch");
    }
    sample.label = torch::zeros({sample.image_pre.size(1), sample.image_pre.size(2)});
    sample.id = "infer";

    fs::create_directories(out_dir);
    torch::NoGradGuard guard;

    const auto h = sample.image_pre.size(1);
    const auto w = sample.image_pre.size(2);
    const int t = cfg.tile_size;
    torch::Tensor cm;
    if (h == t && w == t) {
        auto r = model->detect(sample.image_pre.unsqueeze(0), sample.image_post.unsqueeze(0));
        cm = r.cm.squeeze(0);
        if (dump_features) {
            if (auto* triple = dynamic_cast<TripleBranchNetImpl*>(model.get())) {
                auto full = triple->forward_full(sample.image_pre.unsqueeze(0),
                                                 sample.image_post.unsqueeze(0));
                for (int j = 0; j < 3; ++j) {
                    for (int i = 0; i < 3; ++i) {
                        char name[64];
                        std::snprintf(name, sizeof(name), "a_%d_%d.png", j + 1, i + 1);
                        dump_feature_grid((fs::path(out_dir) / name).string(),
                                          full.a[j][i].squeeze(0));
                    }
                    write_gray_png((fs::path(out_dir) /
                                    ("head_" + std::to_string(j + 1) + ".png")).string(),
                                   full.head_probs[j].squeeze(0));
                }
            }
        }
    } else {
        // tile, infer per tile, stitch; remainders outside full tiles are cropped
        const auto rows = h / t;
        const auto cols = w / t;
        cm = torch::zeros({rows * t, cols * t});
        for (auto& tile : tile_pair(sample, t)) {
            // ids end with _r<row>c<col>
            auto pos = tile.id.rfind("_r");
            auto rc = tile.id.substr(pos + 2);
            auto cpos = rc.find('c');
            const auto r = std::stoll(rc.substr(0, cpos));
            const auto c = std::stoll(rc.substr(cpos + 1));
            auto out = model->detect(tile.image_pre.unsqueeze(0), tile.image_post.unsqueeze(0));
            cm.slice(0, r * t, (r + 1) * t).slice(1, c * t, (c + 1) * t).copy_(
                out.cm.squeeze(0));
        }
    }

    InferOutcome outcome;
    outcome.change_map = cm;
    write_gray_png((fs::path(out_dir) / "change_map.png").string(), cm);

    if (label_path) {
        auto label = read_mask_png(*label_path);
        label = label.slice(0, 0, cm.size(0)).slice(1, 0, cm.size(1));
        auto colored = colorize(cm >= 0.5, label);
        write_image_png((fs::path(out_dir) / "change_map_color.png").string(), colored);
        outcome.colored = colored;
    }
    return outcome;
}

// ------------------------------------------------------------------- ablate

std::vector<AblateRow> ablate(const TrainConfig& base, bool grid_scr, bool grid_ccr,
                              const std::vector<int>& frames_list, std::ostream& log) {
    struct Cell {
        std::string name;
        bool scr;
        CcrMode mode;
        int frames;
    };
    std::vector<Cell> cells;
    auto add_cell = [&cells](const Cell& c) {
        for (const auto& e : cells) {
            if (e.scr == c.scr && e.mode == c.mode && e.frames == c.frames) return;
        }
        cells.push_back(c);
    };

    const CcrMode base_mode = base.enable_ccr ? base.ccr_mode : CcrMode::kNone;
    std::vector<bool> scr_values = grid_scr ? std::vector<bool>{false, true}
                                            : std::vector<bool>{base.enable_scr};
    std::vector<CcrMode> ccr_values = grid_ccr
                                          ? std::vector<CcrMode>{CcrMode::kNone, CcrMode::kCcr}
                                          : std::vector<CcrMode>{base_mode};
    for (bool scr : scr_values) {
        for (auto mode : ccr_values) {
            Cell c{"", scr, mode, mode == CcrMode::kNone ? 0 : base.frames};
            c.name = std::string(scr ? "scr" : "---") + "+" +
                     (mode == CcrMode::kNone ? "---" : to_string(mode));
            add_cell(c);
        }
    }
    if (!frames_list.empty()) {
        add_cell({"scr+temporal(4)", true, CcrMode::kTemporal, 4});
        for (int f : frames_list) {
            add_cell({"scr+ccr(" + std::to_string(f) + ")", true, CcrMode::kCcr, f});
        }
    }

    std::vector<AblateRow> rows;
    for (const auto& cell : cells) {
        TrainConfig cfg = base;
        cfg.enable_scr = cell.scr;
        cfg.ccr_mode = cell.mode;
        cfg.enable_ccr = cell.mode != CcrMode::kNone;
        if (cell.frames > 0) cfg.frames = cell.frames;
        cfg.out_dir = (fs::path(base.out_dir) / ("cell_" + cell.name)).string();
        cfg.checkpoint = "checkpoint.cdckpt";
        log << "[ablate] cell " << cell.name << "\n";
        auto outcome = train(cfg, log);

        AblateRow row;
        row.name = cell.name.empty() ? "base" : cell.name;
        row.scr = cell.scr;
        row.ccr_mode = cell.mode;
        row.frames = cell.frames;
        {
            torch::manual_seed(static_cast<std::int64_t>(cfg.seed));
            auto model = build_model(cfg);
            row.params = parameter_count(*model);
        }
        if (!cfg.val_manifest.empty()) {
            std::ostringstream sink;
            auto ev = evaluate(outcome.checkpoint_path, cfg.val_manifest, std::nullopt, sink);
            row.scores = ev.scores;
            row.counts = ev.counts;
        }
        rows.push_back(row);
    }
    return rows;
}

std::string format_ablation_table(const std::vector<AblateRow>& rows) {
    std::ostringstream os;
    os << "cell                 scr  ccr_mode  frames      params     Pre.    Rec.     F1    "
          "IoU     OA\n";
    for (const auto& r : rows) {
        char buf[256];
        std::snprintf(buf, sizeof(buf),
                      "%-20s %-4s %-9s %6d %11lld  %6.2f  %6.2f  %6.2f  %6.2f  %6.2f\n",
                      r.name.c_str(), r.scr ? "on" : "off", to_string(r.ccr_mode).c_str(),
                      r.frames, static_cast<long long>(r.params), 100 * r.scores.precision,
                      100 * r.scores.recall, 100 * r.scores.f1, 100 * r.scores.iou,
                      100 * r.scores.oa);
        os << buf;
    }
    return os.str();
}

}  // namespace cd
