// Copyright 2026 The S2TPV Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "s2tpv/checkpoint.hpp"
#include "s2tpv/config.hpp"
#include "s2tpv/eval.hpp"
#include "s2tpv/selftest.hpp"
#include "s2tpv/train.hpp"

namespace fs = std::filesystem;
using namespace s2tpv;

namespace {

std::vector<WorldSpec> load_scene_dir(const std::string& dir) {
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const std::string name = entry.path().filename().string();
        if (entry.is_regular_file() && name.rfind("scene_", 0) == 0 &&
            entry.path().extension() == ".txt")
            files.push_back(entry.path().string());
    }
    if (files.empty()) throw ConfigError("no scene_*.txt files in " + dir);
    std::sort(files.begin(), files.end());
    std::vector<WorldSpec> worlds;
    for (const auto& f : files) worlds.push_back(load_world(f));
    return worlds;
}

template <class T>
S2tpvModelT<T> build_model(const RunConfig& cfg) {
    return make_model<T>(cfg.enc, cfg.n_semantic, cfg.n_scale, cfg.model_seed);
}

template <class T>
void cmd_train(const RunConfig& cfg, const std::string& scenes_dir, const std::string& out_dir) {
    auto worlds = load_scene_dir(scenes_dir);
    auto model = build_model<T>(cfg);
    std::cout << "training " << model.params.total_size() << " parameters on " << worlds.size()
              << " scenes for " << cfg.train.steps << " steps (m_train=" << cfg.train.m_train
              << ")\n";
    auto result = train(model, worlds, cfg.train);
    fs::create_directories(out_dir);
    save_checkpoint((fs::path(out_dir) / "checkpoint.bin").string(), model.params);
    save_loss_curve((fs::path(out_dir) / "loss.csv").string(), result);
    std::cout << "final loss " << result.loss_curve.back() << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "checkpoint.bin").string() << "\n";
}

template <class T>
void cmd_eval(const RunConfig& cfg, const std::string& scenes_dir, const std::string& ckpt,
              const std::string& out_dir, long m_override, const std::string& mask_flag,
              const std::string& baseline) {
    auto worlds = load_scene_dir(scenes_dir);
    auto model = build_model<T>(cfg);
    load_checkpoint(ckpt, model.params);
    const std::size_t m = m_override >= 0 ? static_cast<std::size_t>(m_override)
                                          : cfg.enc.temporal_steps;
    EvalMask mask = cfg.mask;
    if (mask_flag == "occupied") mask = EvalMask::occupied;
    else if (mask_flag == "all") mask = EvalMask::all;
    else if (!mask_flag.empty()) throw ConfigError("unknown --eval-mask value: " + mask_flag);
    auto report = evaluate(model, worlds, m, mask);
    fs::create_directories(out_dir);
    write_report_csv((fs::path(out_dir) / "report.csv").string(), report);
    write_confusion_csv((fs::path(out_dir) / "confusion.csv").string(), report.cm);
    if (!baseline.empty()) {
        auto base = read_report_csv(baseline);
        write_gain_csv((fs::path(out_dir) / "gain.csv").string(), base, report);
    }
    std::cout << "mIoU " << report.miou_value << " over " << worlds.size() << " scenes (m=" << m
              << ")\n";
    std::cout << "wrote " << (fs::path(out_dir) / "report.csv").string() << "\n";
}

template <class T>
void cmd_ablate(const RunConfig& cfg, const std::string& scenes_dir, const std::string& ckpt,
                const std::string& out_dir, std::size_t m_min, std::size_t m_max) {
    if (m_max < m_min) throw ConfigError("ablate: m-max below m-min");
    auto worlds = load_scene_dir(scenes_dir);
    auto model = build_model<T>(cfg);
    load_checkpoint(ckpt, model.params);
    std::vector<std::size_t> m_values;
    for (std::size_t m = m_min; m <= m_max; ++m) m_values.push_back(m);
    auto rows = ablate_temporal_range(model, worlds, m_values, cfg.mask);
    fs::create_directories(out_dir);
    write_ablation_csv((fs::path(out_dir) / "ablation.csv").string(), rows);
    for (const auto& row : rows)
        std::cout << "m=" << row.m << " mIoU " << row.report.miou_value << "\n";
    std::cout << "wrote " << (fs::path(out_dir) / "ablation.csv").string() << "\n";
}

template <class T>
void cmd_viz(const RunConfig& cfg, const std::string& scenes_dir, const std::string& ckpt,
             const std::string& out_dir, long m_override) {
    auto worlds = load_scene_dir(scenes_dir);
    auto model = build_model<T>(cfg);
    load_checkpoint(ckpt, model.params);
    const std::size_t m = m_override >= 0 ? static_cast<std::size_t>(m_override)
                                          : cfg.enc.temporal_steps;
    fs::create_directories(out_dir);
    FrameRenderer<T> renderer(model.n_scale, model.cfg.embed_dim);
    for (std::size_t wi = 0; wi < worlds.size(); ++wi) {
        const std::size_t t = worlds[wi].trajectory.size() - 1;
        const auto tpv = encode_world(model, worlds[wi], t, m, &renderer, wi);
        char tag[32];
        std::snprintf(tag, sizeof(tag), "%03zu", wi);
        emit_heatmap(tpv.plane_hw, (fs::path(out_dir) / ("bev_" + std::string(tag) + ".pgm")).string());
        const auto pred = predict_grid(model, worlds[wi], t, m, &renderer, wi);
        save_label_grid((fs::path(out_dir) / ("pred_" + std::string(tag) + ".grid")).string(), pred);
        const auto gt = voxelize_labels(renderer.lidar(worlds[wi], wi, t), model.cfg.grid(),
                                        model.cfg.bounds, model.n_semantic);
        save_label_grid((fs::path(out_dir) / ("gt_" + std::string(tag) + ".grid")).string(), gt);
    }
    std::cout << "wrote heatmaps and grids for " << worlds.size() << " scenes to " << out_dir
              << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"S2TPV: spatiotemporal tri-perspective-view occupancy toolkit"};
    app.require_subcommand(1);

    std::string config_path;
    std::uint64_t seed_override = 0;
    bool seed_set = false;
    std::string out_dir = "out";
    app.add_option("--config", config_path, "run configuration file")->envname("S2TPV_CONFIG");
    app.add_option("--seed", seed_override, "override the training seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_option("--out", out_dir, "output directory");

    // gen-scenes
    auto* gen = app.add_subcommand("gen-scenes", "generate a scene dataset");
    std::size_t gen_count = 20;
    std::uint64_t gen_seed = 0;
    std::string gen_kind = "occlusion";
    gen->add_option("--count", gen_count, "number of scenes");
    gen->add_option("--scene-seed", gen_seed, "first scene seed");
    gen->add_option("--kind", gen_kind, "occlusion | random");

    // train
    auto* tr = app.add_subcommand("train", "train a model on a scene dataset");
    std::string tr_scenes;
    tr->add_option("--scenes", tr_scenes, "scene directory")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ev_scenes, ev_ckpt, ev_mask, ev_baseline;
    long ev_m = -1;
    ev->add_option("--scenes", ev_scenes, "scene directory")->required();
    ev->add_option("--checkpoint", ev_ckpt, "checkpoint file")->required();
    ev->add_option("--m", ev_m, "history steps at inference");
    ev->add_option("--eval-mask", ev_mask, "occupied | all");
    ev->add_option("--baseline", ev_baseline, "baseline report.csv for the gain table");

    // ablate
    auto* ab = app.add_subcommand("ablate", "temporal-range sweep on one checkpoint");
    std::string ab_scenes, ab_ckpt;
    std::size_t ab_min = 0, ab_max = 7;
    ab->add_option("--scenes", ab_scenes, "scene directory")->required();
    ab->add_option("--checkpoint", ab_ckpt, "checkpoint file")->required();
    ab->add_option("--m-min", ab_min, "first history depth");
    ab->add_option("--m-max", ab_max, "last history depth");

    // viz
    auto* vz = app.add_subcommand("viz", "emit BEV heatmaps and prediction grids");
    std::string vz_scenes, vz_ckpt;
    long vz_m = -1;
    vz->add_option("--scenes", vz_scenes, "scene directory")->required();
    vz->add_option("--checkpoint", vz_ckpt, "checkpoint file")->required();
    vz->add_option("--m", vz_m, "history steps at inference");

    // selftest
    auto* st = app.add_subcommand("selftest", "run the built-in oracle battery");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    }

    try {
        if (st->parsed()) return run_selftest() ? 0 : 2;

        if (gen->parsed()) {
            fs::create_directories(out_dir);
            if (seed_set) gen_seed = seed_override;
            for (std::size_t i = 0; i < gen_count; ++i) {
                const std::uint64_t scene_seed = gen_seed + i;
                WorldSpec spec = gen_kind == "occlusion" ? make_occlusion_world(scene_seed)
                                 : gen_kind == "random"  ? make_random_world(scene_seed)
                                                         : throw ConfigError("unknown kind: " +
                                                                             gen_kind);
                char tag[32];
                std::snprintf(tag, sizeof(tag), "%03zu", i);
                save_world((fs::path(out_dir) / ("scene_" + std::string(tag) + ".txt")).string(),
                           spec);
            }
            std::cout << "wrote " << gen_count << " " << gen_kind << " scenes to " << out_dir
                      << "\n";
            return 0;
        }

        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        if (seed_set) cfg.train.seed = seed_override;

        auto dispatch = [&](auto run64, auto run32) {
            if (cfg.dtype == Dtype::f64) run64();
            else run32();
        };

        if (tr->parsed())
            dispatch([&] { cmd_train<double>(cfg, tr_scenes, out_dir); },
                     [&] { cmd_train<float>(cfg, tr_scenes, out_dir); });
        else if (ev->parsed())
            dispatch([&] { cmd_eval<double>(cfg, ev_scenes, ev_ckpt, out_dir, ev_m, ev_mask,
                                            ev_baseline); },
                     [&] { cmd_eval<float>(cfg, ev_scenes, ev_ckpt, out_dir, ev_m, ev_mask,
                                           ev_baseline); });
        else if (ab->parsed())
            dispatch([&] { cmd_ablate<double>(cfg, ab_scenes, ab_ckpt, out_dir, ab_min, ab_max); },
                     [&] { cmd_ablate<float>(cfg, ab_scenes, ab_ckpt, out_dir, ab_min, ab_max); });
        else if (vz->parsed())
            dispatch([&] { cmd_viz<double>(cfg, vz_scenes, vz_ckpt, out_dir, vz_m); },
                     [&] { cmd_viz<float>(cfg, vz_scenes, vz_ckpt, out_dir, vz_m); });
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
