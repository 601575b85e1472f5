// cdctl: command line entry point for the change detection toolkit.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cd/checkpoint.hpp"
#include "cd/common.hpp"
#include "cd/config.hpp"
#include "cd/data.hpp"
#include "cd/pvf.hpp"
#include "cd/trainer.hpp"

namespace fs = std::filesystem;

namespace {

cd::TrainConfig load_config(const std::string& config_path,
                            const std::vector<std::string>& overrides,
                            const std::string& out_dir, std::optional<std::uint64_t> seed) {
    cd::TrainConfig cfg = config_path.empty() ? cd::TrainConfig{}
                                              : cd::TrainConfig::from_file(config_path);
    for (const auto& kv : overrides) cfg.apply_override(kv);
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    if (seed) cfg.seed = *seed;
    cfg.validate();
    return cfg;
}

std::vector<int> parse_int_list(const std::string& csv) {
    std::vector<int> out;
    std::string item;
    std::istringstream ss(csv);
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(std::stoi(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"change detection toolkit"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed_opt;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "declarative key=value config file");
        cmd->add_option("--set", overrides, "config override key=value (repeatable)");
        cmd->add_option("--out", out_dir, "output directory");
        cmd->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t s) { seed_opt = s; }, "override the seed");
    };

    // synth
    auto* synth = app.add_subcommand("synth", "generate a synthetic bi-temporal dataset");
    std::uint64_t synth_seed = 7;
    int synth_n = 16, synth_size = 256;
    double synth_rate = 0.08;
    std::string synth_out = "data";
    synth->add_option("--seed", synth_seed, "generator seed");
    synth->add_option("--n", synth_n, "number of samples");
    synth->add_option("--size", synth_size, "raster side in pixels");
    synth->add_option("--rate", synth_rate, "target changed-pixel fraction");
    synth->add_option("--out", synth_out, "output directory")->required();

    // train
    auto* train_cmd = app.add_subcommand("train", "train a change detector");
    add_common(train_cmd);

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a split");
    std::string eval_ckpt, eval_manifest;
    bool eval_have_config = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--manifest", eval_manifest, "manifest of the split")->required();
    eval_cmd->add_option("--config", config_path, "optional config for compatibility checks")
        ->each([&](const std::string&) { eval_have_config = true; });
    eval_cmd->add_option("--set", overrides, "config override key=value (repeatable)")
        ->each([&](const std::string&) { eval_have_config = true; });
    eval_cmd->add_option("--out", out_dir, "output directory");

    // infer
    auto* infer_cmd = app.add_subcommand("infer", "run inference on an image pair");
    std::string infer_ckpt, infer_pre, infer_post, infer_label;
    bool dump_features = false;
    infer_cmd->add_option("--checkpoint", infer_ckpt, "checkpoint file")->required();
    infer_cmd->add_option("--pre", infer_pre, "pre-change image")->required();
    infer_cmd->add_option("--post", infer_post, "post-change image")->required();
    infer_cmd->add_option("--label", infer_label, "optional label for the color map");
    infer_cmd->add_flag("--dump-features", dump_features,
                        "dump the nine activation maps and head maps");
    infer_cmd->add_option("--out", out_dir, "output directory");

    // pvf-dump
    auto* pvf_cmd = app.add_subcommand("pvf-dump", "dump pseudo video frames as PNGs");
    std::string pvf_pre, pvf_post;
    int pvf_frames = 4;
    pvf_cmd->add_option("--pre", pvf_pre, "pre-change image")->required();
    pvf_cmd->add_option("--post", pvf_post, "post-change image")->required();
    pvf_cmd->add_option("--frames", pvf_frames, "frame count W >= 2");
    pvf_cmd->add_option("--out", out_dir, "output directory");

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "run the SCR/CCR ablation grid");
    std::string grid_csv = "scr,ccr", frames_csv = "2,3,4";
    ablate_cmd->add_option("--grid", grid_csv, "comma list of branches to grid (scr,ccr)");
    ablate_cmd->add_option("--frames", frames_csv, "comma list of frame counts");
    add_common(ablate_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            cd::SynthOptions opt{synth_seed, synth_n, synth_size, synth_rate};
            auto manifest = cd::synth_dataset(opt, synth_out);
            std::cout << "wrote " << manifest.entries.size() << " samples under " << synth_out
                      << " (manifest: " << (fs::path(synth_out) / "manifest.txt").string()
                      << ")\n";
        } else if (train_cmd->parsed()) {
            auto cfg = load_config(config_path, overrides, out_dir, seed_opt);
            auto outcome = cd::train(cfg, std::cout);
            std::cout << "trained " << outcome.steps << " steps -> "
                      << outcome.checkpoint_path << "\n";
        } else if (eval_cmd->parsed()) {
            std::optional<cd::TrainConfig> cfg;
            if (eval_have_config) {
                cfg = load_config(config_path, overrides, out_dir, seed_opt);
            }
            auto outcome = cd::evaluate(eval_ckpt, eval_manifest, cfg, std::cout);
            if (!out_dir.empty()) {
                fs::create_directories(out_dir);
                std::ofstream txt(fs::path(out_dir) / "metrics.txt");
                txt << cd::format_scores(outcome.scores, outcome.counts);
                std::ofstream kv(fs::path(out_dir) / "metrics.kv");
                kv << cd::scores_kv(outcome.scores, outcome.counts);
            }
        } else if (infer_cmd->parsed()) {
            const std::string dir = out_dir.empty() ? "." : out_dir;
            std::optional<std::string> label;
            if (!infer_label.empty()) label = infer_label;
            cd::infer(infer_ckpt, infer_pre, infer_post, label, dir, dump_features);
            std::cout << "wrote change_map.png" << (label ? " and change_map_color.png" : "")
                      << " under " << dir << "\n";
        } else if (pvf_cmd->parsed()) {
            const std::string dir = out_dir.empty() ? "." : out_dir;
            fs::create_directories(dir);
            auto pre = cd::read_image_png(pvf_pre);
            auto post = cd::read_image_png(pvf_post);
            auto stack = cd::build_pvf(pre, post, pvf_frames);
            for (int w = 0; w < pvf_frames; ++w) {
                char name[32];
                std::snprintf(name, sizeof(name), "frame_%02d.png", w);
                cd::write_image_png((fs::path(dir) / name).string(), stack[w]);
            }
            std::cout << "wrote " << pvf_frames << " frames under " << dir << "\n";
        } else if (ablate_cmd->parsed()) {
            auto cfg = load_config(config_path, overrides, out_dir, seed_opt);
            bool grid_scr = grid_csv.find("scr") != std::string::npos;
            bool grid_ccr = grid_csv.find("ccr") != std::string::npos;
            auto rows = cd::ablate(cfg, grid_scr, grid_ccr, parse_int_list(frames_csv),
                                   std::cout);
            auto table = cd::format_ablation_table(rows);
            std::cout << table;
            fs::create_directories(cfg.out_dir);
            std::ofstream out(fs::path(cfg.out_dir) / "ablation.txt");
            out << table;
        }
    } catch (const cd::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cd::ParameterError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const cd::NumericsError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
