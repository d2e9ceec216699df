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

#include "s2tpv/attention.hpp"
#include "s2tpv/geometry.hpp"
#include "s2tpv/tensor.hpp"
#include "s2tpv/tpv.hpp"

namespace s2tpv {

enum class Variant { unified, warp };

struct EncoderConfig {
    std::size_t h = 32, w = 32, d = 4;
    std::size_t embed_dim = 32;
    std::size_t n_layers = 1;
    std::size_t temporal_steps = 1;  // M
    std::size_t n_ref = 4;
    std::size_t n_cross = 4;
    std::size_t n_heads = 4;
    std::size_t n_points = 2;
    std::size_t ffn_hidden = 0;  // 0 -> 2 * embed_dim
    Variant variant = Variant::unified;
    EgoBounds bounds;

    GridDims grid() const { return {h, w, d}; }
    std::size_t ffn_dim() const { return ffn_hidden ? ffn_hidden : 2 * embed_dim; }

    void validate() const {
        if (n_layers < 1) throw ConfigError("encoder: n_layers must be >= 1");
        if (embed_dim == 0 || embed_dim % n_heads != 0)
            throw ConfigError("encoder: embed_dim must be a positive multiple of n_heads");
        if (h == 0 || w == 0 || d == 0) throw ConfigError("encoder: empty grid");
        bounds.require_nondegenerate();
    }

    /// Full-scale reference configuration: 100x100x8 grid, 256-wide
    /// embeddings, three encoder layers.
    static EncoderConfig base() {
        EncoderConfig cfg;
        cfg.h = 100;
        cfg.w = 100;
        cfg.d = 8;
        cfg.embed_dim = 256;
        cfg.n_layers = 3;
        cfg.bounds = EgoBounds{-51.2, 51.2, -51.2, 51.2, -5.0, 3.0};
        return cfg;
    }

    /// Same grid and depth at half the embedding width.
    static EncoderConfig small() {
        EncoderConfig cfg = base();
        cfg.embed_dim = 128;
        return cfg;
    }
};

/// One timestep of encoder input: ego pose plus per-camera feature pyramids.
template <class T>
struct FrameInputT {
    RigidTransform ego_pose;  // ego -> global
    std::vector<CameraModel> cameras;
    std::vector<ValueBankT<T>> pyramids;  // per camera, coarse levels later
};

using FrameInput = FrameInputT<double>;

template <class T>
struct EncoderLayerParamsT {
    TensorT<T> norm_cvha_g, norm_cvha_b;
    TensorT<T> norm_sca_g, norm_sca_b;
    TensorT<T> norm_ffn_g, norm_ffn_b;
    DeformAttnParamsT<T> cvha;
    DeformAttnParamsT<T> sca;
    TcvhaParamsT<T> tcvha;
    TensorT<T> ffn_w1, ffn_b1, ffn_w2, ffn_b2;
};

using EncoderLayerParams = EncoderLayerParamsT<double>;

template <class T>
EncoderLayerParamsT<T> init_encoder_layer(const EncoderConfig& cfg, std::size_t n_levels,
                                          Rng& rng) {
    const std::size_t c = cfg.embed_dim;
    EncoderLayerParamsT<T> p;
    p.norm_cvha_g = TensorT<T>::full({c}, T(1), true);
    p.norm_cvha_b = TensorT<T>::zeros({c}, true);
    p.norm_sca_g = TensorT<T>::full({c}, T(1), true);
    p.norm_sca_b = TensorT<T>::zeros({c}, true);
    p.norm_ffn_g = TensorT<T>::full({c}, T(1), true);
    p.norm_ffn_b = TensorT<T>::zeros({c}, true);
    p.cvha = init_deform_attn<T>(c, cfg.n_heads, cfg.n_points, cvha_ref_count(cfg.n_cross), rng);
    p.sca = init_deform_attn<T>(c, cfg.n_heads, cfg.n_points, cfg.n_ref * n_levels, rng);
    p.tcvha = init_tcvha<T>(c, cfg.n_heads, cfg.n_points, cfg.n_cross, rng);
    p.ffn_w1 = TensorT<T>::gaussian({c, cfg.ffn_dim()}, rng,
                                    static_cast<T>(std::sqrt(1.0 / static_cast<double>(c))), true);
    p.ffn_b1 = TensorT<T>::zeros({cfg.ffn_dim()}, true);
    p.ffn_w2 = TensorT<T>::gaussian({cfg.ffn_dim(), c}, rng,
                                    static_cast<T>(std::sqrt(1.0 / static_cast<double>(cfg.ffn_dim()))),
                                    true);
    p.ffn_b2 = TensorT<T>::zeros({c}, true);
    return p;
}

template <class T>
void register_encoder_layer(EncoderLayerParamsT<T>& p, ParamStoreT<T>& store,
                            const std::string& prefix) {
    store.add(prefix + ".norm_cvha_g", p.norm_cvha_g);
    store.add(prefix + ".norm_cvha_b", p.norm_cvha_b);
    store.add(prefix + ".norm_sca_g", p.norm_sca_g);
    store.add(prefix + ".norm_sca_b", p.norm_sca_b);
    store.add(prefix + ".norm_ffn_g", p.norm_ffn_g);
    store.add(prefix + ".norm_ffn_b", p.norm_ffn_b);
    register_deform_attn(p.cvha, store, prefix + ".cvha");
    register_deform_attn(p.sca, store, prefix + ".sca");
    register_tcvha(p.tcvha, store, prefix + ".tcvha");
    store.add(prefix + ".ffn_w1", p.ffn_w1);
    store.add(prefix + ".ffn_b1", p.ffn_b1);
    store.add(prefix + ".ffn_w2", p.ffn_w2);
    store.add(prefix + ".ffn_b2", p.ffn_b2);
}

namespace detail {

template <class T>
TpvStateT<T> state_layer_norm(const TpvStateT<T>& x, const TensorT<T>& g, const TensorT<T>& b) {
    return {layer_norm(x.plane_hw, g, b), layer_norm(x.plane_dh, g, b),
            layer_norm(x.plane_wd, g, b)};
}

template <class T>
TpvStateT<T> state_add(const TpvStateT<T>& a, const TpvStateT<T>& b) {
    return {add(a.plane_hw, b.plane_hw), add(a.plane_dh, b.plane_dh),
            add(a.plane_wd, b.plane_wd)};
}

/// Projected pillar references for all cameras of one timestep, per plane.
template <class T>
std::vector<std::vector<PillarRefs>> project_frame_pillars(
    const FrameInputT<T>& frame, const RigidTransform& current_pose,
    const std::vector<EgoRefPoints>& pillars) {
    std::vector<std::vector<PillarRefs>> out(pillars.size());
    for (std::size_t pi = 0; pi < pillars.size(); ++pi) {
        out[pi].resize(frame.cameras.size());
        for (std::size_t ci = 0; ci < frame.cameras.size(); ++ci) {
            const auto view = vvt(frame.cameras[ci].extrinsic, frame.ego_pose, current_pose);
            const auto proj = project_refs(pillars[pi], view, frame.cameras[ci]);
            PillarRefs& pr = out[pi][ci];
            pr.n_ref = pillars[pi].n_ref;
            pr.pixels = proj.pixels;
            pr.valid = proj.valid;
            pr.image_width = frame.cameras[ci].image_width;
            pr.image_height = frame.cameras[ci].image_height;
        }
    }
    return out;
}

template <class T>
TensorT<T> ffn_block(const TensorT<T>& plane, const EncoderLayerParamsT<T>& lp) {
    const std::size_t c = plane.shape()[2];
    auto flat = reshape(plane, {plane.size() / c, c});
    auto h = softplus(affine(flat, lp.ffn_w1, lp.ffn_b1));
    return reshape(affine(h, lp.ffn_w2, lp.ffn_b2), plane.shape());
}

/// Spatial fusion of one timestep onto the three (normed) plane states.
template <class T>
TpvStateT<T> sca_state(const TpvStateT<T>& normed, const FrameInputT<T>& frame,
                       const std::vector<std::vector<PillarRefs>>& frame_pillars,
                       const std::vector<ValueBankT<T>>& vp_pyramids,
                       const DeformAttnParamsT<T>& params) {
    TpvStateT<T> out;
    for (PlaneId plane : {PlaneId::HW, PlaneId::DH, PlaneId::WD}) {
        const int pi = static_cast<int>(plane);
        const auto& src = normed.plane(plane);
        const std::size_t c = src.shape()[2];
        auto queries = reshape(src, {src.size() / c, c});
        std::vector<ScaCameraInput<T>> cams(frame.cameras.size());
        for (std::size_t ci = 0; ci < frame.cameras.size(); ++ci) {
            cams[ci].refs = frame_pillars[static_cast<std::size_t>(pi)][ci];
            cams[ci].pyramid = vp_pyramids[ci];
            cams[ci].pyramid_is_value_projected = true;
        }
        auto fused = reshape(sca(queries, cams, params), src.shape());
        (plane == PlaneId::HW ? out.plane_hw : plane == PlaneId::DH ? out.plane_dh : out.plane_wd) =
            fused;
    }
    return out;
}

}  // namespace detail

/// FIFO append with eviction past capacity.
template <class Entry>
void push_history(HistoryQueue<Entry>& queue, Entry entry) {
    queue.push(std::move(entry));
}

/// Unified spatiotemporal encoder. Frames run oldest to newest with the
/// current frame last; shorter histories are padded by repeating the oldest
/// frame. Per layer: plane self-attention (CVHA), per-timestep virtual-view
/// spatial fusion (SCA), recursive temporal fusion (TCVHA), then the FFN,
/// all as pre-norm residual blocks.
template <class T>
TpvStateT<T> encode(const TpvQueriesT<T>& queries,
                    const std::vector<EncoderLayerParamsT<T>>& layers,
                    const std::vector<FrameInputT<T>>& frames_in, const EncoderConfig& cfg) {
    cfg.validate();
    if (frames_in.empty()) throw ConfigError("encode: no frames");
    if (frames_in.size() > cfg.temporal_steps + 1)
        throw ConfigError("encode: more frames than temporal_steps + 1");
    for (const auto& f : frames_in)
        if (f.cameras.size() != f.pyramids.size())
            throw DimError("encode: camera/pyramid count mismatch");

    // pad the front by repeating the oldest frame
    std::vector<const FrameInputT<T>*> frames;
    for (std::size_t k = frames_in.size(); k <= cfg.temporal_steps; ++k)
        frames.push_back(&frames_in.front());
    for (const auto& f : frames_in) frames.push_back(&f);

    const RigidTransform current_pose = frames_in.back().ego_pose;
    std::vector<EgoRefPoints> pillars;
    for (PlaneId plane : {PlaneId::HW, PlaneId::DH, PlaneId::WD})
        pillars.push_back(sample_ego_refs(plane, cfg.grid(), cfg.bounds, cfg.n_ref));
    std::vector<std::vector<std::vector<PillarRefs>>> proj;  // [timestep][plane][camera]
    proj.reserve(frames.size());
    for (const auto* f : frames)
        proj.push_back(detail::project_frame_pillars(*f, current_pose, pillars));

    TpvStateT<T> x = queries.positioned();
    for (const auto& lp : layers) {
        x = detail::state_add(x, cvha(detail::state_layer_norm(x, lp.norm_cvha_g, lp.norm_cvha_b),
                                      lp.cvha, cfg.n_cross));

        auto normed = detail::state_layer_norm(x, lp.norm_sca_g, lp.norm_sca_b);
        std::vector<TpvStateT<T>> spatial;
        spatial.reserve(frames.size());
        for (std::size_t k = 0; k < frames.size(); ++k) {
            std::vector<ValueBankT<T>> vp(frames[k]->pyramids.size());
            for (std::size_t ci = 0; ci < frames[k]->pyramids.size(); ++ci)
                vp[ci] = value_project_bank(frames[k]->pyramids[ci], lp.sca);
            spatial.push_back(detail::sca_state(normed, *frames[k], proj[k], vp, lp.sca));
        }
        x = detail::state_add(x, temporal_fuse(spatial, lp.tcvha, cfg.n_cross));

        auto normed_ffn = detail::state_layer_norm(x, lp.norm_ffn_g, lp.norm_ffn_b);
        TpvStateT<T> ffn_out{detail::ffn_block(normed_ffn.plane_hw, lp),
                             detail::ffn_block(normed_ffn.plane_dh, lp),
                             detail::ffn_block(normed_ffn.plane_wd, lp)};
        x = detail::state_add(x, ffn_out);
    }
    return x;
}

// ---------------------------------------------------------------------------
// Warp-based variant
// ---------------------------------------------------------------------------

template <class T>
struct WarpCacheT {
    bool has = false;
    TensorT<T> bev;  // final-layer HW plane of the previous call
    RigidTransform pose;
};

using WarpCache = WarpCacheT<double>;

/// Warp-variant encoder step: the previous call's BEV plane is warped to the
/// current ego frame and fused via TCVHA in the self-attention slot; SCA
/// lifts the current frame only. The first call falls back to
/// self-concatenation. Updates the cache with this call's BEV plane.
template <class T>
TpvStateT<T> encode_warp(const TpvQueriesT<T>& queries,
                         const std::vector<EncoderLayerParamsT<T>>& layers,
                         const FrameInputT<T>& frame, WarpCacheT<T>& cache,
                         const EncoderConfig& cfg) {
    cfg.validate();
    if (cfg.variant != Variant::warp) throw ConfigError("encode_warp: config variant is not warp");
    if (frame.cameras.size() != frame.pyramids.size())
        throw DimError("encode_warp: camera/pyramid count mismatch");

    TensorT<T> warped;
    if (cache.has) warped = warp_bev(cache.bev, cache.pose, frame.ego_pose, cfg.bounds);

    std::vector<EgoRefPoints> pillars;
    for (PlaneId plane : {PlaneId::HW, PlaneId::DH, PlaneId::WD})
        pillars.push_back(sample_ego_refs(plane, cfg.grid(), cfg.bounds, cfg.n_ref));
    const auto proj = detail::project_frame_pillars(frame, frame.ego_pose, pillars);

    TpvStateT<T> x = queries.positioned();
    for (const auto& lp : layers) {
        auto normed = detail::state_layer_norm(x, lp.norm_cvha_g, lp.norm_cvha_b);
        TpvStateT<T> prev_sub{cache.has ? warped : normed.plane_hw, normed.plane_dh,
                              normed.plane_wd};
        x = detail::state_add(x, tcvha_step(prev_sub, normed, lp.tcvha, cfg.n_cross));

        auto normed_sca = detail::state_layer_norm(x, lp.norm_sca_g, lp.norm_sca_b);
        std::vector<ValueBankT<T>> vp(frame.pyramids.size());
        for (std::size_t ci = 0; ci < frame.pyramids.size(); ++ci)
            vp[ci] = value_project_bank(frame.pyramids[ci], lp.sca);
        x = detail::state_add(x, detail::sca_state(normed_sca, frame, proj, vp, lp.sca));

        auto normed_ffn = detail::state_layer_norm(x, lp.norm_ffn_g, lp.norm_ffn_b);
        TpvStateT<T> ffn_out{detail::ffn_block(normed_ffn.plane_hw, lp),
                             detail::ffn_block(normed_ffn.plane_dh, lp),
                             detail::ffn_block(normed_ffn.plane_wd, lp)};
        x = detail::state_add(x, ffn_out);
    }

    cache.has = true;
    // detached copy: the recurrent cache must not keep the call's tape alive
    cache.bev = TensorT<T>::from_data(
        x.plane_hw.shape(),
        std::vector<T>(x.plane_hw.values().begin(), x.plane_hw.values().end()));
    cache.pose = frame.ego_pose;
    return x;
}

}  // namespace s2tpv
