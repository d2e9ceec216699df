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
#include <deque>
#include <string>
#include <vector>

#include "s2tpv/tensor.hpp"
#include "s2tpv/tpv.hpp"

namespace s2tpv {

// Large negative logit; exp(x - max) underflows to exactly zero, so masked
// sampling slots carry no weight after softmax.
inline constexpr double kMaskedLogit = -1e30;

/// Projection set for one deformable-attention mechanism. Offsets and weights
/// start at zero so attention opens uniform and unshifted.
template <class T>
struct DeformAttnParamsT {
    std::size_t n_heads = 0;
    std::size_t n_points = 0;  // sampling points per head per reference
    std::size_t n_refs = 0;    // reference slots per query
    TensorT<T> offset_w, offset_b;  // C -> heads * refs * points * 2
    TensorT<T> weight_w, weight_b;  // C -> heads * refs * points
    TensorT<T> value_w, value_b;    // C -> C
    TensorT<T> output_w, output_b;  // C -> C

    std::size_t embed_dim() const { return value_w.shape()[0]; }
    std::size_t head_dim() const { return embed_dim() / n_heads; }
};

using DeformAttnParams = DeformAttnParamsT<double>;

template <class T>
DeformAttnParamsT<T> init_deform_attn(std::size_t c, std::size_t n_heads, std::size_t n_points,
                                      std::size_t n_refs, Rng& rng) {
    if (n_heads == 0 || c % n_heads != 0)
        throw ConfigError("deform_attn: embed dim must be divisible by head count");
    if (n_points == 0 || n_refs == 0) throw ConfigError("deform_attn: empty sampling layout");
    DeformAttnParamsT<T> p;
    p.n_heads = n_heads;
    p.n_points = n_points;
    p.n_refs = n_refs;
    const std::size_t spp = n_heads * n_refs * n_points;
    p.offset_w = TensorT<T>::zeros({c, spp * 2}, true);
    p.offset_b = TensorT<T>::zeros({spp * 2}, true);
    p.weight_w = TensorT<T>::zeros({c, spp}, true);
    p.weight_b = TensorT<T>::zeros({spp}, true);
    const T proj_std = static_cast<T>(std::sqrt(1.0 / static_cast<double>(c)));
    p.value_w = TensorT<T>::gaussian({c, c}, rng, proj_std, true);
    p.value_b = TensorT<T>::zeros({c}, true);
    p.output_w = TensorT<T>::gaussian({c, c}, rng, proj_std, true);
    p.output_b = TensorT<T>::zeros({c}, true);
    return p;
}

template <class T>
void register_deform_attn(DeformAttnParamsT<T>& p, ParamStoreT<T>& store,
                          const std::string& prefix) {
    store.add(prefix + ".offset_w", p.offset_w);
    store.add(prefix + ".offset_b", p.offset_b);
    store.add(prefix + ".weight_w", p.weight_w);
    store.add(prefix + ".weight_b", p.weight_b);
    store.add(prefix + ".value_w", p.value_w);
    store.add(prefix + ".value_b", p.value_b);
    store.add(prefix + ".output_w", p.output_w);
    store.add(prefix + ".output_b", p.output_b);
}

/// Reference layout shared by all queries of one call: slot r of every query
/// targets value map map_of_slot[r]; coords[n][r] gives the query-specific
/// grid coordinate. An empty valid mask means every slot is live.
template <class T>
struct RefSetT {
    std::vector<int> map_of_slot;
    TensorT<T> coords;                // [N, R, 2], constant
    std::vector<std::uint8_t> valid;  // N * R, or empty

    std::size_t n_slots() const { return map_of_slot.size(); }
    std::size_t n_queries() const { return coords.shape()[0]; }
};

using RefSet = RefSetT<double>;

/// Keyed 2D feature maps ([h, w, C]) addressed by RefSet map indices.
template <class T>
using ValueBankT = std::vector<TensorT<T>>;

template <class T>
ValueBankT<T> value_project_bank(const ValueBankT<T>& bank, const DeformAttnParamsT<T>& p) {
    ValueBankT<T> out;
    out.reserve(bank.size());
    for (const auto& m : bank) {
        const std::size_t rows = m.shape()[0] * m.shape()[1];
        out.push_back(reshape(affine(reshape(m, {rows, m.shape()[2]}), p.value_w, p.value_b),
                              m.shape()));
    }
    return out;
}

namespace detail {

/// Fused multi-head deformable sampling: per (head, ref, point) the offset
/// shifts the slot's reference coordinate, the head's channel slice of the
/// value-projected map is sampled bilinearly (out-of-bounds nodes contribute
/// zero) and the softmax weight blends it into the head sum. One tape node
/// with an analytic backward to offsets, weights and every referenced map.
template <class T>
TensorT<T> deform_sample_combine(const ValueBankT<T>& vp_maps,
                                 const std::vector<int>& map_of_slot,
                                 const TensorT<T>& ref_coords,  // [N, R, 2] constant
                                 const TensorT<T>& offsets,     // [N, H*R*P*2]
                                 const TensorT<T>& weights,     // [N, H*R*P]
                                 std::size_t n_heads, std::size_t n_points, std::size_t c) {
    const std::size_t n = offsets.shape()[0];
    const std::size_t n_refs = map_of_slot.size();
    const std::size_t ch = c / n_heads;

    struct MapView {
        const T* data;
        std::size_t h, w, c;
    };
    auto view_of = [&](const ValueBankT<T>& maps, std::size_t m) {
        return MapView{maps[m].values().data(), maps[m].shape()[0], maps[m].shape()[1],
                       maps[m].shape()[2]};
    };

    auto run_forward = [n, n_refs, n_heads, n_points, ch, map_of_slot](
                           const std::vector<MapView>& maps, const T* coords, const T* off,
                           const T* wgt, T* out) {
        for (std::size_t q = 0; q < n; ++q) {
            T* orow = out + q * n_heads * ch;
            for (std::size_t h = 0; h < n_heads; ++h) {
                for (std::size_t r = 0; r < n_refs; ++r) {
                    const MapView& m = maps[static_cast<std::size_t>(map_of_slot[r])];
                    for (std::size_t pt = 0; pt < n_points; ++pt) {
                        const std::size_t idx = (h * n_refs + r) * n_points + pt;
                        const T a = coords[(q * n_refs + r) * 2 + 0] + off[q * n_refs * n_heads * n_points * 2 + idx * 2 + 0];
                        const T b = coords[(q * n_refs + r) * 2 + 1] + off[q * n_refs * n_heads * n_points * 2 + idx * 2 + 1];
                        const T w = wgt[q * n_heads * n_refs * n_points + idx];
                        const T fi = std::floor(a), fj = std::floor(b);
                        const auto i0 = static_cast<std::ptrdiff_t>(fi);
                        const auto j0 = static_cast<std::ptrdiff_t>(fj);
                        const T fa = a - fi, fb = b - fj;
                        const std::ptrdiff_t is[2] = {i0, i0 + 1};
                        const std::ptrdiff_t js[2] = {j0, j0 + 1};
                        const T was[2] = {T(1) - fa, fa};
                        const T wbs[2] = {T(1) - fb, fb};
                        for (int ci = 0; ci < 2; ++ci)
                            for (int cj = 0; cj < 2; ++cj) {
                                const std::ptrdiff_t ii = is[ci], jj = js[cj];
                                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(m.h) ||
                                    jj >= static_cast<std::ptrdiff_t>(m.w))
                                    continue;
                                const T cw = was[ci] * wbs[cj];
                                if (cw == T(0)) continue;
                                const T* src = m.data + (static_cast<std::size_t>(ii) * m.w +
                                                         static_cast<std::size_t>(jj)) *
                                                            m.c +
                                               h * ch;
                                const T scale = w * cw;
                                for (std::size_t cc = 0; cc < ch; ++cc)
                                    orow[h * ch + cc] += scale * src[cc];
                            }
                    }
                }
            }
        }
    };

    std::vector<TensorT<T>> parents{offsets, weights};
    for (const auto& m : vp_maps) parents.push_back(m);

    std::vector<typename TensorT<T>::Node*> raw_maps;  // filled in closure below
    auto out = TensorT<T>::make_op(
        {n, c}, parents,
        [vp_nodes = [&] {
             std::vector<std::shared_ptr<typename TensorT<T>::Node>> v;
             for (const auto& m : vp_maps) v.push_back(m.node());
             return v;
         }(),
         on = offsets.node(), wn = weights.node(), rn = ref_coords.node(), map_of_slot, n, n_refs,
         n_heads, n_points, ch](auto& nd) {
            const bool go = on->needs_grad;
            const bool gw = wn->needs_grad;
            if (go) on->ensure_grad();
            if (gw) wn->ensure_grad();
            bool any_map_grad = false;
            for (auto& mn : vp_nodes) {
                if (mn->needs_grad) {
                    mn->ensure_grad();
                    any_map_grad = true;
                }
            }
            const T* coords = rn->value.data();
            for (std::size_t q = 0; q < n; ++q) {
                const T* g = nd.grad.data() + q * n_heads * ch;
                for (std::size_t h = 0; h < n_heads; ++h) {
                    for (std::size_t r = 0; r < n_refs; ++r) {
                        auto& map_node = *vp_nodes[static_cast<std::size_t>(map_of_slot[r])];
                        const std::size_t mh = map_node.shape[0];
                        const std::size_t mw = map_node.shape[1];
                        const std::size_t mc = map_node.shape[2];
                        for (std::size_t pt = 0; pt < n_points; ++pt) {
                            const std::size_t idx = (h * n_refs + r) * n_points + pt;
                            const T a = coords[(q * n_refs + r) * 2 + 0] +
                                        on->value[q * n_heads * n_refs * n_points * 2 + idx * 2 + 0];
                            const T b = coords[(q * n_refs + r) * 2 + 1] +
                                        on->value[q * n_heads * n_refs * n_points * 2 + idx * 2 + 1];
                            const T w = wn->value[q * n_heads * n_refs * n_points + idx];
                            const T fi = std::floor(a), fj = std::floor(b);
                            const auto i0 = static_cast<std::ptrdiff_t>(fi);
                            const auto j0 = static_cast<std::ptrdiff_t>(fj);
                            const T fa = a - fi, fb = b - fj;
                            const std::ptrdiff_t is[2] = {i0, i0 + 1};
                            const std::ptrdiff_t js[2] = {j0, j0 + 1};
                            const T was[2] = {T(1) - fa, fa};
                            const T wbs[2] = {T(1) - fb, fb};
                            const T das[2] = {T(-1), T(1)};
                            T wgrad = T(0), ga = T(0), gb = T(0);
                            for (int ci = 0; ci < 2; ++ci)
                                for (int cj = 0; cj < 2; ++cj) {
                                    const std::ptrdiff_t ii = is[ci], jj = js[cj];
                                    if (ii < 0 || jj < 0 ||
                                        ii >= static_cast<std::ptrdiff_t>(mh) ||
                                        jj >= static_cast<std::ptrdiff_t>(mw))
                                        continue;
                                    const T cw = was[ci] * wbs[cj];
                                    const std::size_t base =
                                        (static_cast<std::size_t>(ii) * mw +
                                         static_cast<std::size_t>(jj)) *
                                            mc +
                                        h * ch;
                                    T dot = T(0);
                                    for (std::size_t cc = 0; cc < ch; ++cc)
                                        dot += g[h * ch + cc] * map_node.value[base + cc];
                                    if (gw || go) {
                                        wgrad += cw * dot;
                                        ga += das[ci] * wbs[cj] * dot;
                                        gb += was[ci] * das[cj] * dot;
                                    }
                                    if (any_map_grad && map_node.needs_grad && cw != T(0)) {
                                        const T scale = w * cw;
                                        for (std::size_t cc = 0; cc < ch; ++cc)
                                            map_node.grad[base + cc] += scale * g[h * ch + cc];
                                    }
                                }
                            if (gw) wn->grad[q * n_heads * n_refs * n_points + idx] += wgrad;
                            if (go) {
                                on->grad[q * n_heads * n_refs * n_points * 2 + idx * 2 + 0] +=
                                    w * ga;
                                on->grad[q * n_heads * n_refs * n_points * 2 + idx * 2 + 1] +=
                                    w * gb;
                            }
                        }
                    }
                }
            }
        });

    std::vector<MapView> views;
    views.reserve(vp_maps.size());
    for (std::size_t m = 0; m < vp_maps.size(); ++m) views.push_back(view_of(vp_maps, m));
    run_forward(views, ref_coords.values().data(), offsets.values().data(),
                weights.values().data(), out.values_mut().data());
    return out;
}

/// Core multi-head deformable attention over a batch of queries: learned
/// offsets and softmax weights from the query, fused bilinear sampling over
/// the value-projected maps, then the output projection.
template <class T>
TensorT<T> deform_attn_batched(const TensorT<T>& queries, const RefSetT<T>& refs,
                               const ValueBankT<T>& bank, const DeformAttnParamsT<T>& params,
                               bool bank_is_value_projected) {
    const std::size_t n = queries.shape()[0];
    const std::size_t c = queries.shape()[1];
    const std::size_t n_heads = params.n_heads;
    const std::size_t n_pts = params.n_points;
    const std::size_t n_refs = params.n_refs;
    if (refs.n_slots() != n_refs)
        throw DimError("deform_attn: ref set has " + std::to_string(refs.n_slots()) +
                       " slots, params expect " + std::to_string(n_refs));
    if (refs.n_queries() != n) throw DimError("deform_attn: ref/query count mismatch");
    for (int m : refs.map_of_slot)
        if (m < 0 || static_cast<std::size_t>(m) >= bank.size())
            throw ConfigError("deform_attn: reference targets missing value map");

    ValueBankT<T> vp = bank_is_value_projected ? bank : value_project_bank(bank, params);

    auto offsets = affine(queries, params.offset_w, params.offset_b);  // [N, H*R*P*2]
    auto wlogits = affine(queries, params.weight_w, params.weight_b);  // [N, H*R*P]

    const std::size_t spp = n_heads * n_refs * n_pts;
    if (!refs.valid.empty()) {
        std::vector<T> mask(n * spp, T(0));
        for (std::size_t q = 0; q < n; ++q)
            for (std::size_t r = 0; r < n_refs; ++r)
                if (!refs.valid[q * n_refs + r])
                    for (std::size_t h = 0; h < n_heads; ++h)
                        for (std::size_t pt = 0; pt < n_pts; ++pt)
                            mask[q * spp + (h * n_refs + r) * n_pts + pt] = T(kMaskedLogit);
        wlogits = add(wlogits, TensorT<T>::from_data({n, spp}, std::move(mask)));
    }
    auto weights = reshape(softmax(reshape(wlogits, {n, n_heads, n_refs * n_pts}), 2), {n, spp});

    auto sampled = deform_sample_combine(vp, refs.map_of_slot, refs.coords, offsets, weights,
                                         n_heads, n_pts, c);
    return affine(sampled, params.output_w, params.output_b);
}

}  // namespace detail

/// Deformable attention for a query batch [N, C]; a rank-1 [C] query is
/// treated as a batch of one and returns [C].
template <class T>
TensorT<T> deform_attn(const TensorT<T>& queries, const RefSetT<T>& refs,
                       const ValueBankT<T>& bank, const DeformAttnParamsT<T>& params,
                       bool bank_is_value_projected = false) {
    if (queries.rank() == 1) {
        auto q2 = reshape(queries, {std::size_t(1), queries.shape()[0]});
        auto out = detail::deform_attn_batched(q2, refs, bank, params, bank_is_value_projected);
        return reshape(out, {queries.shape()[0]});
    }
    if (queries.rank() != 2) throw DimError("deform_attn: queries must be [C] or [N, C]");
    return detail::deform_attn_batched(queries, refs, bank, params, bank_is_value_projected);
}

// ---------------------------------------------------------------------------
// 3D deformable attention over a multi-scale pyramid
// ---------------------------------------------------------------------------

/// Projected pillar reference points for one camera: pixel coordinates plus a
/// per-pillar validity mask, in the camera's full-resolution pixel frame.
struct PillarRefs {
    std::size_t n_ref = 0;
    std::vector<double> pixels;       // N * n_ref * 2, (u, v)
    std::vector<std::uint8_t> valid;  // N * n_ref
    int image_width = 0;
    int image_height = 0;
};

/// Expands pillar pixel refs across pyramid levels: slot (k, j) samples level
/// j at the level-rescaled position of pillar point k. Weights later
/// normalize jointly over levels, refs and points.
template <class T>
RefSetT<T> build_pyramid_refs(const PillarRefs& pr, const ValueBankT<T>& pyramid) {
    const std::size_t n_levels = pyramid.size();
    const std::size_t n = pr.valid.size() / pr.n_ref;
    RefSetT<T> rs;
    rs.map_of_slot.resize(pr.n_ref * n_levels);
    rs.valid.resize(n * pr.n_ref * n_levels);
    std::vector<T> coords(n * pr.n_ref * n_levels * 2);
    for (std::size_t k = 0; k < pr.n_ref; ++k)
        for (std::size_t j = 0; j < n_levels; ++j) rs.map_of_slot[k * n_levels + j] = static_cast<int>(j);
    for (std::size_t q = 0; q < n; ++q) {
        for (std::size_t k = 0; k < pr.n_ref; ++k) {
            const bool ok = pr.valid[q * pr.n_ref + k];
            const double u = pr.pixels[(q * pr.n_ref + k) * 2 + 0];
            const double v = pr.pixels[(q * pr.n_ref + k) * 2 + 1];
            for (std::size_t j = 0; j < n_levels; ++j) {
                const std::size_t slot = k * n_levels + j;
                const double lev_h = static_cast<double>(pyramid[j].shape()[0]);
                const double lev_w = static_cast<double>(pyramid[j].shape()[1]);
                // pixel centers map onto feature-cell centers at every level
                const double row = (v + 0.5) * lev_h / pr.image_height - 0.5;
                const double col = (u + 0.5) * lev_w / pr.image_width - 0.5;
                coords[(q * rs.map_of_slot.size() + slot) * 2 + 0] = ok ? static_cast<T>(row) : T(-1);
                coords[(q * rs.map_of_slot.size() + slot) * 2 + 1] = ok ? static_cast<T>(col) : T(-1);
                rs.valid[q * rs.map_of_slot.size() + slot] = ok ? 1 : 0;
            }
        }
    }
    rs.coords = TensorT<T>::from_data({n, rs.map_of_slot.size(), 2}, std::move(coords));
    return rs;
}

/// Deformable attention against one camera's feature pyramid; references are
/// the camera's projected pillar points, expanded over all pyramid levels.
template <class T>
TensorT<T> deform_attn_3d(const TensorT<T>& queries, const PillarRefs& pr,
                          const ValueBankT<T>& pyramid, const DeformAttnParamsT<T>& params,
                          bool bank_is_value_projected = false) {
    return deform_attn(queries, build_pyramid_refs<T>(pr, pyramid), pyramid, params,
                       bank_is_value_projected);
}

// ---------------------------------------------------------------------------
// Spatial Cross-Attention: mean over hit views, identity for unhit cells
// ---------------------------------------------------------------------------

template <class T>
struct ScaCameraInput {
    PillarRefs refs;
    ValueBankT<T> pyramid;
    bool pyramid_is_value_projected = false;
};

/// Per cell, averages deformable-attention outputs over the cameras that see
/// at least one of the cell's reference points; cells no camera sees keep
/// their query value. Each camera attends only over the row subset it hits;
/// per-row attention is row-independent, so the subset matches the full run.
template <class T>
TensorT<T> sca(const TensorT<T>& queries, const std::vector<ScaCameraInput<T>>& cameras,
               const DeformAttnParamsT<T>& params) {
    if (queries.rank() != 2) throw DimError("sca: queries must be [N, C]");
    const std::size_t n = queries.shape()[0];
    std::vector<double> hit_count(n, 0.0);
    TensorT<T> acc;
    for (const auto& cam : cameras) {
        std::vector<std::size_t> rows;
        for (std::size_t q = 0; q < n; ++q) {
            for (std::size_t k = 0; k < cam.refs.n_ref; ++k) {
                if (cam.refs.valid[q * cam.refs.n_ref + k]) {
                    rows.push_back(q);
                    hit_count[q] += 1.0;
                    break;
                }
            }
        }
        if (rows.empty()) continue;
        PillarRefs sub;
        sub.n_ref = cam.refs.n_ref;
        sub.image_width = cam.refs.image_width;
        sub.image_height = cam.refs.image_height;
        sub.pixels.reserve(rows.size() * sub.n_ref * 2);
        sub.valid.reserve(rows.size() * sub.n_ref);
        for (std::size_t q : rows)
            for (std::size_t k = 0; k < sub.n_ref; ++k) {
                sub.pixels.push_back(cam.refs.pixels[(q * sub.n_ref + k) * 2 + 0]);
                sub.pixels.push_back(cam.refs.pixels[(q * sub.n_ref + k) * 2 + 1]);
                sub.valid.push_back(cam.refs.valid[q * sub.n_ref + k]);
            }
        auto out_sub = deform_attn_3d(gather_rows(queries, rows), sub, cam.pyramid, params,
                                      cam.pyramid_is_value_projected);
        auto placed = scatter_rows(out_sub, rows, n);
        acc = acc.valid() ? add(acc, placed) : placed;
    }
    std::vector<T> inv(n), nohit(n);
    for (std::size_t q = 0; q < n; ++q) {
        inv[q] = hit_count[q] > 0 ? static_cast<T>(1.0 / hit_count[q]) : T(0);
        nohit[q] = hit_count[q] > 0 ? T(0) : T(1);
    }
    auto passthrough = colwise_mul(queries, TensorT<T>::from_data({n}, std::move(nohit)));
    if (!acc.valid()) return passthrough;
    return add(colwise_mul(acc, TensorT<T>::from_data({n}, std::move(inv))), passthrough);
}

// ---------------------------------------------------------------------------
// Cross-View Hybrid Attention
// ---------------------------------------------------------------------------

namespace detail {

/// RefSet for one plane's queries: optional history slot, self slot, then
/// cross-view slots into the other two planes. map_base offsets the current
/// planes inside the value bank.
template <class T>
RefSetT<T> build_cvha_refs(PlaneId plane, const GridDims& grid, std::size_t n_cross,
                           int map_base, int history_map) {
    std::size_t rows = 0, cols = 0;
    switch (plane) {
        case PlaneId::HW: rows = grid.h; cols = grid.w; break;
        case PlaneId::DH: rows = grid.d; cols = grid.h; break;
        case PlaneId::WD: rows = grid.w; cols = grid.d; break;
    }
    const std::size_t n = rows * cols;
    const bool with_history = history_map >= 0;
    const std::size_t n_slots = (with_history ? 2 : 1) + 2 * n_cross;
    RefSetT<T> rs;
    rs.map_of_slot.resize(n_slots);
    std::vector<T> coords(n * n_slots * 2);
    for (std::size_t a = 0; a < rows; ++a) {
        for (std::size_t b = 0; b < cols; ++b) {
            const std::size_t q = a * cols + b;
            const auto cell_refs = cross_view_refs(plane, a, b, grid, n_cross);
            std::size_t slot = 0;
            auto put = [&](int map_idx, double r, double c) {
                if (q == 0) rs.map_of_slot[slot] = map_idx;
                coords[(q * n_slots + slot) * 2 + 0] = static_cast<T>(r);
                coords[(q * n_slots + slot) * 2 + 1] = static_cast<T>(c);
                ++slot;
            };
            if (with_history)
                put(history_map, static_cast<double>(a), static_cast<double>(b));
            for (const auto& ref : cell_refs)
                put(map_base + static_cast<int>(ref.plane), ref.row, ref.col);
        }
    }
    rs.coords = TensorT<T>::from_data({n, n_slots, 2}, std::move(coords));
    return rs;
}

}  // namespace detail

inline std::size_t cvha_ref_count(std::size_t n_cross) { return 1 + 2 * n_cross; }
inline std::size_t tcvha_ref_count(std::size_t n_cross) { return 2 + 2 * n_cross; }

/// Self-attention across the three planes: every plane cell samples itself
/// and cross-view points in the two orthogonal planes, all from the same
/// input snapshot.
template <class T>
TpvStateT<T> cvha(const TpvStateT<T>& tpv, const DeformAttnParamsT<T>& params,
                  std::size_t n_cross) {
    const GridDims g = tpv.grid();
    const std::size_t c = tpv.embed_dim();
    ValueBankT<T> bank{tpv.plane_hw, tpv.plane_dh, tpv.plane_wd};
    ValueBankT<T> vp = value_project_bank(bank, params);
    TpvStateT<T> out;
    for (PlaneId plane : {PlaneId::HW, PlaneId::DH, PlaneId::WD}) {
        auto refs = detail::build_cvha_refs<T>(plane, g, n_cross, 0, -1);
        const auto& src = tpv.plane(plane);
        auto q = reshape(src, {src.size() / c, c});
        auto o = reshape(deform_attn(q, refs, vp, params, true), src.shape());
        (plane == PlaneId::HW ? out.plane_hw : plane == PlaneId::DH ? out.plane_dh : out.plane_wd) = o;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Temporal Cross-View Hybrid Attention
// ---------------------------------------------------------------------------

template <class T>
struct TcvhaParamsT {
    DeformAttnParamsT<T> attn;
    TensorT<T> fuse_w, fuse_b;  // 2C -> C query fusion
};

using TcvhaParams = TcvhaParamsT<double>;

template <class T>
TcvhaParamsT<T> init_tcvha(std::size_t c, std::size_t n_heads, std::size_t n_points,
                           std::size_t n_cross, Rng& rng) {
    TcvhaParamsT<T> p;
    p.attn = init_deform_attn<T>(c, n_heads, n_points, tcvha_ref_count(n_cross), rng);
    p.fuse_w = TensorT<T>::gaussian({2 * c, c}, rng,
                                    static_cast<T>(std::sqrt(1.0 / (2.0 * static_cast<double>(c)))),
                                    true);
    p.fuse_b = TensorT<T>::zeros({c}, true);
    return p;
}

template <class T>
void register_tcvha(TcvhaParamsT<T>& p, ParamStoreT<T>& store, const std::string& prefix) {
    register_deform_attn(p.attn, store, prefix + ".attn");
    store.add(prefix + ".fuse_w", p.fuse_w);
    store.add(prefix + ".fuse_b", p.fuse_b);
}

/// One temporal fusion step. Queries fuse the previous step's features with
/// the current spatial features channel-wise; each cell then samples four
/// interaction types: its history point in the previous plane, its self point
/// and cross-view points in the current planes. Value maps span all six
/// planes.
template <class T>
TpvStateT<T> tcvha_step(const TpvStateT<T>& prev_fused, const TpvStateT<T>& cur_spatial,
                        const TcvhaParamsT<T>& params, std::size_t n_cross) {
    const GridDims g = cur_spatial.grid();
    const std::size_t c = cur_spatial.embed_dim();
    if (prev_fused.embed_dim() != c || prev_fused.grid().h != g.h ||
        prev_fused.grid().w != g.w || prev_fused.grid().d != g.d)
        throw DimError("tcvha_step: prev/current state shapes differ");
    ValueBankT<T> bank{prev_fused.plane_hw, prev_fused.plane_dh, prev_fused.plane_wd,
                       cur_spatial.plane_hw, cur_spatial.plane_dh, cur_spatial.plane_wd};
    ValueBankT<T> vp = value_project_bank(bank, params.attn);
    TpvStateT<T> out;
    for (PlaneId plane : {PlaneId::HW, PlaneId::DH, PlaneId::WD}) {
        const int plane_idx = static_cast<int>(plane);
        auto refs = detail::build_cvha_refs<T>(plane, g, n_cross, 3, plane_idx);
        const auto& prev_p = prev_fused.plane(plane);
        const auto& cur_p = cur_spatial.plane(plane);
        const std::size_t n = cur_p.size() / c;
        auto q_cat = concat_last(reshape(prev_p, {n, c}), reshape(cur_p, {n, c}));
        auto q = affine(q_cat, params.fuse_w, params.fuse_b);
        auto o = reshape(deform_attn(q, refs, vp, params.attn, true), cur_p.shape());
        (plane == PlaneId::HW ? out.plane_hw : plane == PlaneId::DH ? out.plane_dh : out.plane_wd) = o;
    }
    return out;
}

/// Recursive temporal fusion over an oldest-to-newest history of spatially
/// fused states. The first step concatenates the oldest state with itself.
template <class T>
TpvStateT<T> temporal_fuse(const std::vector<TpvStateT<T>>& history,
                           const TcvhaParamsT<T>& params, std::size_t n_cross) {
    if (history.empty()) throw ConfigError("temporal_fuse: empty history");
    TpvStateT<T> fused = tcvha_step(history.front(), history.front(), params, n_cross);
    for (std::size_t k = 1; k < history.size(); ++k)
        fused = tcvha_step(fused, history[k], params, n_cross);
    return fused;
}

// ---------------------------------------------------------------------------
// History queue
// ---------------------------------------------------------------------------

/// Bounded FIFO of per-timestep entries, oldest first.
template <class Entry>
class HistoryQueue {
public:
    explicit HistoryQueue(std::size_t capacity) : capacity_(capacity) {}

    void push(Entry e) {
        entries_.push_back(std::move(e));
        while (entries_.size() > capacity_) entries_.pop_front();
    }

    std::size_t size() const { return entries_.size(); }
    std::size_t capacity() const { return capacity_; }
    bool empty() const { return entries_.empty(); }
    const Entry& oldest() const { return entries_.front(); }
    const Entry& newest() const { return entries_.back(); }
    const Entry& entry(std::size_t i) const { return entries_[i]; }
    void clear() { entries_.clear(); }

private:
    std::size_t capacity_;
    std::deque<Entry> entries_;
};

}  // namespace s2tpv
