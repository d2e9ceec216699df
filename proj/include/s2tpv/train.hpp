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

#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "s2tpv/loss.hpp"
#include "s2tpv/model.hpp"
#include "s2tpv/optimizer.hpp"

namespace s2tpv {

struct TrainConfig {
    Task task = Task::sop;
    double lr = 2e-3;
    std::size_t steps = 800;
    std::size_t batch_size = 1;
    std::uint64_t seed = 7;
    std::size_t m_train = 1;  // history steps during training
    std::size_t t_min = 0;    // earliest trajectory step to sample
    std::size_t warmup_steps = 0;
    bool cosine_decay = true;
    double clip_norm = 1.0;
};

struct TrainResult {
    std::vector<double> loss_curve;  // one entry per step
};

/// Non-finite training loss; carries the failing step index.
struct TrainDivergence : NumericError {
    std::size_t step;
    explicit TrainDivergence(std::size_t s)
        : NumericError("non-finite loss at training step " + std::to_string(s)), step(s) {}
};

/// One supervised forward pass on (world, t): encode with m history steps,
/// decode voxels and the frame's LiDAR points, voxelize ground truth, fold
/// into the task loss.
template <class T>
TensorT<T> scene_loss(const S2tpvModelT<T>& model, const WorldSpec& world, std::size_t t,
                      std::size_t m, Task task, FrameRenderer<T>* renderer = nullptr,
                      std::size_t world_key = 0) {
    const auto tpv = encode_world(model, world, t, m, renderer, world_key);
    const GridDims g = model.cfg.grid();
    const std::vector<LidarPoint>& lidar =
        renderer ? renderer->lidar(world, world_key, t) : generate_scene(world, t).lidar_points;

    const VoxelLabelGrid gt = voxelize_labels(lidar, g, model.cfg.bounds, model.n_semantic);
    std::vector<int> voxel_targets(gt.labels.begin(), gt.labels.end());
    auto voxel_logits =
        reshape(decode_voxels(tpv, model.decoder), {g.h * g.w * g.d, model.n_classes()});

    std::vector<Vec3> pts;
    std::vector<int> point_targets;
    for (const auto& p : lidar) {
        pts.push_back(p.ego_xyz);
        point_targets.push_back(p.class_id);
    }
    const std::size_t point_out = task == Task::lidar_seg ? model.n_semantic : 0;
    auto point_logits = decode_points(tpv, pts, model.decoder, model.cfg.bounds, point_out);
    return task_loss(voxel_logits, voxel_targets, point_logits, point_targets, task);
}

/// Adam training over a dataset of worlds. Per step a world and a valid
/// timestep are drawn, the history window is rebuilt and one update applied.
/// Fully determined by (model init, dataset, config seed).
template <class T>
TrainResult train(S2tpvModelT<T>& model, const std::vector<WorldSpec>& worlds,
                  const TrainConfig& cfg) {
    if (worlds.empty()) throw ConfigError("train: empty dataset");
    for (const auto& w : worlds) {
        w.validate();
        if (w.trajectory.size() <= std::max(cfg.m_train, cfg.t_min))
            throw ConfigError("train: trajectory shorter than the sampling window");
    }
    typename AdamT<T>::Options opt;
    opt.lr = cfg.lr;
    opt.clip_norm = cfg.clip_norm;
    AdamT<T> adam(model.params, opt);
    Rng rng(cfg.seed);
    FrameRenderer<T> renderer(model.n_scale, model.cfg.embed_dim);
    TrainResult result;
    result.loss_curve.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        TensorT<T> loss;
        const std::size_t batch = std::max<std::size_t>(1, cfg.batch_size);
        for (std::size_t b = 0; b < batch; ++b) {
            const std::size_t wi = rng.index(worlds.size());
            const WorldSpec& world = worlds[wi];
            const std::size_t lo = std::max(cfg.m_train, cfg.t_min);
            const std::size_t t = lo + rng.index(world.trajectory.size() - lo);
            auto term = scene_loss(model, world, t, cfg.m_train, cfg.task, &renderer, wi);
            loss = loss.valid() ? add(loss, term) : term;
        }
        if (batch > 1) loss = scale(loss, T(1) / static_cast<T>(batch));
        if (!loss.all_finite()) throw TrainDivergence(step);
        result.loss_curve.push_back(static_cast<double>(loss.item()));
        loss.backward();
        double lr_scale = cfg.cosine_decay
                              ? 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                                      static_cast<double>(cfg.steps)))
                              : 1.0;
        if (step < cfg.warmup_steps)
            lr_scale *= static_cast<double>(step + 1) / static_cast<double>(cfg.warmup_steps);
        adam.step(lr_scale);
    }
    return result;
}

inline void save_loss_curve(const std::string& path, const TrainResult& result) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open loss curve for writing: " + path);
    os << "step,loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < result.loss_curve.size(); ++i)
        os << i << "," << result.loss_curve[i] << "\n";
}

}  // namespace s2tpv
