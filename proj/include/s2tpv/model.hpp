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

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "s2tpv/decoder.hpp"
#include "s2tpv/encoder.hpp"
#include "s2tpv/scene.hpp"
#include "s2tpv/tpv.hpp"

namespace s2tpv {

/// Full S2TPV model: queries, encoder stack, shared decoder and the parameter
/// registry that fixes checkpoint layout.
template <class T>
struct S2tpvModelT {
    EncoderConfig cfg;
    std::size_t n_semantic = 8;
    std::size_t n_scale = 2;
    TpvQueriesT<T> queries;
    std::vector<EncoderLayerParamsT<T>> layers;
    DecoderParamsT<T> decoder;
    ParamStoreT<T> params;

    std::size_t n_classes() const { return n_semantic + 1; }  // + empty
};

using S2tpvModel = S2tpvModelT<double>;

template <class T>
S2tpvModelT<T> make_model(const EncoderConfig& cfg, std::size_t n_semantic, std::size_t n_scale,
                          std::uint64_t seed) {
    cfg.validate();
    S2tpvModelT<T> m;
    m.cfg = cfg;
    m.n_semantic = n_semantic;
    m.n_scale = n_scale;
    m.queries = init_queries<T>(cfg.h, cfg.w, cfg.d, cfg.embed_dim, seed);
    register_queries(m.queries, m.params, "tpv");
    Rng rng(seed ^ 0xA5A5A5A5ull);
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        m.layers.push_back(init_encoder_layer<T>(cfg, n_scale, rng));
        register_encoder_layer(m.layers.back(), m.params, "enc.layer" + std::to_string(l));
    }
    m.decoder = init_decoder<T>(cfg.embed_dim, 2 * cfg.embed_dim, n_semantic + 1, rng);
    register_decoder(m.decoder, m.params, "decoder");
    return m;
}

/// Renders one trajectory step into encoder input.
template <class T>
FrameInputT<T> frame_input_from_scene(const SceneFrame& frame, std::size_t n_scale,
                                      std::size_t feat_dim) {
    FrameInputT<T> in;
    in.ego_pose = frame.ego_pose;
    in.cameras = frame.cameras;
    in.pyramids = render_features<T>(frame, n_scale, feat_dim);
    return in;
}

/// Frame producer with a per-(world, timestep) ray-cast cache. Ray casting
/// dominates repeated rendering of the same frames; the cheap embedding and
/// the LiDAR/ground-truth products are cached alongside.
template <class T>
class FrameRenderer {
public:
    FrameRenderer(std::size_t n_scale, std::size_t feat_dim)
        : n_scale_(n_scale), feat_dim_(feat_dim) {}

    FrameInputT<T> frame(const WorldSpec& world, std::size_t world_key, std::size_t t) {
        const Entry& e = entry(world, world_key, t);
        FrameInputT<T> in;
        in.ego_pose = e.ego_pose;
        in.cameras = e.cameras;
        in.pyramids.reserve(e.images.size());
        for (const auto& img : e.images)
            in.pyramids.push_back(embed_pyramid<T>(img, n_scale_, feat_dim_, world.n_semantic));
        return in;
    }

    std::vector<FrameInputT<T>> window(const WorldSpec& world, std::size_t world_key,
                                       std::size_t t, std::size_t m) {
        std::vector<FrameInputT<T>> frames;
        const std::size_t first = t >= m ? t - m : 0;
        for (std::size_t k = first; k <= t; ++k) frames.push_back(frame(world, world_key, k));
        return frames;
    }

    const std::vector<LidarPoint>& lidar(const WorldSpec& world, std::size_t world_key,
                                         std::size_t t) {
        return entry(world, world_key, t).lidar_points;
    }

private:
    struct Entry {
        RigidTransform ego_pose;
        std::vector<CameraModel> cameras;
        std::vector<RaycastImage> images;
        std::vector<LidarPoint> lidar_points;
    };

    const Entry& entry(const WorldSpec& world, std::size_t world_key, std::size_t t) {
        const auto key = std::make_pair(world_key, t);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        const SceneFrame frame = generate_scene(world, t);
        Entry e;
        e.ego_pose = frame.ego_pose;
        e.cameras = frame.cameras;
        e.lidar_points = frame.lidar_points;
        e.images.reserve(frame.cameras.size());
        for (const auto& cam : frame.cameras) e.images.push_back(raycast_camera(frame, cam));
        return cache_.emplace(key, std::move(e)).first->second;
    }

    std::size_t n_scale_;
    std::size_t feat_dim_;
    std::map<std::pair<std::size_t, std::size_t>, Entry> cache_;
};

/// Builds the oldest-to-newest frame window [t - m .. t] for one world.
template <class T>
std::vector<FrameInputT<T>> build_frame_window(const WorldSpec& world, std::size_t t,
                                               std::size_t m, std::size_t n_scale,
                                               std::size_t feat_dim) {
    std::vector<FrameInputT<T>> frames;
    const std::size_t first = t >= m ? t - m : 0;
    for (std::size_t k = first; k <= t; ++k)
        frames.push_back(frame_input_from_scene<T>(generate_scene(world, k), n_scale, feat_dim));
    return frames;
}

/// Encoder forward for one world at trajectory step t with m history steps.
template <class T>
TpvStateT<T> encode_world(const S2tpvModelT<T>& model, const WorldSpec& world, std::size_t t,
                          std::size_t m, FrameRenderer<T>* renderer = nullptr,
                          std::size_t world_key = 0) {
    EncoderConfig cfg = model.cfg;
    cfg.temporal_steps = m;
    auto frames = renderer ? renderer->window(world, world_key, t, m)
                           : build_frame_window<T>(world, t, m, model.n_scale, cfg.embed_dim);
    return encode(model.queries, model.layers, frames, cfg);
}

}  // namespace s2tpv
