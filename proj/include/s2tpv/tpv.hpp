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

#include "s2tpv/geometry.hpp"
#include "s2tpv/tensor.hpp"

namespace s2tpv {

/// The tri-perspective latent state: top (HW), front (DH) and side (WD)
/// feature planes sharing one embedding width.
template <class T>
struct TpvStateT {
    TensorT<T> plane_hw;  // [H, W, C]
    TensorT<T> plane_dh;  // [D, H, C]
    TensorT<T> plane_wd;  // [W, D, C]

    std::size_t embed_dim() const { return plane_hw.shape()[2]; }
    GridDims grid() const {
        return {plane_hw.shape()[0], plane_hw.shape()[1], plane_dh.shape()[0]};
    }

    const TensorT<T>& plane(PlaneId id) const {
        switch (id) {
            case PlaneId::HW: return plane_hw;
            case PlaneId::DH: return plane_dh;
            default: return plane_wd;
        }
    }

    static TpvStateT zeros(const GridDims& g, std::size_t c) {
        return {TensorT<T>::zeros({g.h, g.w, c}), TensorT<T>::zeros({g.d, g.h, c}),
                TensorT<T>::zeros({g.w, g.d, c})};
    }
};

using TpvState = TpvStateT<double>;

/// Learnable query grids plus additive per-plane positional embeddings.
template <class T>
struct TpvQueriesT {
    TensorT<T> query_hw, query_dh, query_wd;
    TensorT<T> pos_hw, pos_dh, pos_wd;

    TpvStateT<T> positioned() const {
        return {add(query_hw, pos_hw), add(query_dh, pos_dh), add(query_wd, pos_wd)};
    }
};

using TpvQueries = TpvQueriesT<double>;

inline std::size_t tpv_query_count(std::size_t h, std::size_t w, std::size_t d) {
    return h * w + d * h + w * d;
}

/// Gaussian queries (std 0.02), zero positional embeddings, all learnable.
template <class T>
TpvQueriesT<T> init_queries(std::size_t h, std::size_t w, std::size_t d, std::size_t c,
                            std::uint64_t rng_seed) {
    if (h == 0 || w == 0 || d == 0 || c == 0) throw ConfigError("init_queries: zero dimension");
    Rng rng(rng_seed);
    const T std_dev = T(0.02);
    TpvQueriesT<T> q;
    q.query_hw = TensorT<T>::gaussian({h, w, c}, rng, std_dev, true);
    q.query_dh = TensorT<T>::gaussian({d, h, c}, rng, std_dev, true);
    q.query_wd = TensorT<T>::gaussian({w, d, c}, rng, std_dev, true);
    q.pos_hw = TensorT<T>::zeros({h, w, c}, true);
    q.pos_dh = TensorT<T>::zeros({d, h, c}, true);
    q.pos_wd = TensorT<T>::zeros({w, d, c}, true);
    return q;
}

template <class T>
void register_queries(TpvQueriesT<T>& q, ParamStoreT<T>& store, const std::string& prefix) {
    store.add(prefix + ".query_hw", q.query_hw);
    store.add(prefix + ".query_dh", q.query_dh);
    store.add(prefix + ".query_wd", q.query_wd);
    store.add(prefix + ".pos_hw", q.pos_hw);
    store.add(prefix + ".pos_dh", q.pos_dh);
    store.add(prefix + ".pos_wd", q.pos_wd);
}

// ---------------------------------------------------------------------------
// Cross-view reference points
// ---------------------------------------------------------------------------

struct CrossViewRef {
    PlaneId plane;
    double row;
    double col;
};

/// Evenly spaced sample positions over index range [0, n-1], endpoints
/// included; a single sample sits at the midpoint.
inline double axis_linspace(std::size_t n, std::size_t k, std::size_t count) {
    if (count == 1) return static_cast<double>(n - 1) * 0.5;
    return static_cast<double>(n - 1) * static_cast<double>(k) / static_cast<double>(count - 1);
}

/// Reference points for one plane query: its own cell first, then n_cross
/// points into each of the two other planes (plane-id order), sharing the
/// query's in-plane coordinates and sweeping the remaining axis.
inline std::vector<CrossViewRef> cross_view_refs(PlaneId plane, std::size_t a, std::size_t b,
                                                 const GridDims& grid, std::size_t n_cross) {
    std::vector<CrossViewRef> refs;
    refs.reserve(1 + 2 * n_cross);
    const auto da = static_cast<double>(a);
    const auto db = static_cast<double>(b);
    switch (plane) {
        case PlaneId::HW: {  // query (h, w): sweep d
            if (a >= grid.h || b >= grid.w) throw ConfigError("cross_view_refs: cell outside grid");
            refs.push_back({PlaneId::HW, da, db});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::DH, axis_linspace(grid.d, k, n_cross), da});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::WD, db, axis_linspace(grid.d, k, n_cross)});
            break;
        }
        case PlaneId::DH: {  // query (d, h): sweep w
            if (a >= grid.d || b >= grid.h) throw ConfigError("cross_view_refs: cell outside grid");
            refs.push_back({PlaneId::DH, da, db});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::HW, db, axis_linspace(grid.w, k, n_cross)});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::WD, axis_linspace(grid.w, k, n_cross), da});
            break;
        }
        case PlaneId::WD: {  // query (w, d): sweep h
            if (a >= grid.w || b >= grid.d) throw ConfigError("cross_view_refs: cell outside grid");
            refs.push_back({PlaneId::WD, da, db});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::HW, axis_linspace(grid.h, k, n_cross), da});
            for (std::size_t k = 0; k < n_cross; ++k)
                refs.push_back({PlaneId::DH, db, axis_linspace(grid.h, k, n_cross)});
            break;
        }
    }
    return refs;
}

// ---------------------------------------------------------------------------
// Point / voxel aggregation
// ---------------------------------------------------------------------------

namespace detail {

// Metric -> grid-index coordinate, with sub-nanocell snapping so that voxel
// centers land exactly on grid nodes.
inline double metric_to_grid(double v, double lo, double hi, std::size_t n) {
    const double g = (v - lo) / ((hi - lo) / static_cast<double>(n)) - 0.5;
    const double r = std::nearbyint(g);
    return std::abs(g - r) < 1e-9 ? r : g;
}

}  // namespace detail

/// Sum of the three plane features bilinearly sampled at a batch of metric
/// ego points. Out-of-bounds projections contribute zero.
template <class T>
TensorT<T> aggregate_points(const TpvStateT<T>& tpv, const std::vector<Vec3>& pts,
                            const EgoBounds& bounds) {
    const GridDims g = tpv.grid();
    const std::size_t n = pts.size();
    std::vector<T> hw_pts(n * 2), dh_pts(n * 2), wd_pts(n * 2);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = pts[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw NumericError("aggregate_points: non-finite coordinates");
        const double gx = detail::metric_to_grid(p.x, bounds.x0, bounds.x1, g.h);
        const double gy = detail::metric_to_grid(p.y, bounds.y0, bounds.y1, g.w);
        const double gz = detail::metric_to_grid(p.z, bounds.z0, bounds.z1, g.d);
        hw_pts[i * 2 + 0] = static_cast<T>(gx);
        hw_pts[i * 2 + 1] = static_cast<T>(gy);
        dh_pts[i * 2 + 0] = static_cast<T>(gz);
        dh_pts[i * 2 + 1] = static_cast<T>(gx);
        wd_pts[i * 2 + 0] = static_cast<T>(gy);
        wd_pts[i * 2 + 1] = static_cast<T>(gz);
    }
    auto s_hw = grid_sample2d(tpv.plane_hw, TensorT<T>::from_data({n, 2}, std::move(hw_pts)));
    auto s_dh = grid_sample2d(tpv.plane_dh, TensorT<T>::from_data({n, 2}, std::move(dh_pts)));
    auto s_wd = grid_sample2d(tpv.plane_wd, TensorT<T>::from_data({n, 2}, std::move(wd_pts)));
    return add(add(s_hw, s_dh), s_wd);
}

template <class T>
TensorT<T> aggregate_point(const TpvStateT<T>& tpv, const Vec3& p, const EgoBounds& bounds) {
    return reshape(aggregate_points(tpv, std::vector<Vec3>{p}, bounds), {tpv.embed_dim()});
}

/// Plane features broadcast-summed at every voxel center: out[h,w,d,:] =
/// hw[h,w,:] + dh[d,h,:] + wd[w,d,:]. Matches the per-voxel aggregate_point
/// loop bit for bit.
template <class T>
TensorT<T> aggregate_voxels(const TpvStateT<T>& tpv) {
    const GridDims g = tpv.grid();
    const std::size_t c = tpv.embed_dim();
    auto out = TensorT<T>::make_op(
        {g.h, g.w, g.d, c}, {tpv.plane_hw, tpv.plane_dh, tpv.plane_wd},
        [hn = tpv.plane_hw.node(), dn = tpv.plane_dh.node(), wn = tpv.plane_wd.node(), g,
         c](auto& nd) {
            if (hn->needs_grad) hn->ensure_grad();
            if (dn->needs_grad) dn->ensure_grad();
            if (wn->needs_grad) wn->ensure_grad();
            for (std::size_t h = 0; h < g.h; ++h)
                for (std::size_t w = 0; w < g.w; ++w)
                    for (std::size_t d = 0; d < g.d; ++d) {
                        const T* gr = nd.grad.data() + (((h * g.w + w) * g.d) + d) * c;
                        if (hn->needs_grad) {
                            T* dst = hn->grad.data() + (h * g.w + w) * c;
                            for (std::size_t k = 0; k < c; ++k) dst[k] += gr[k];
                        }
                        if (dn->needs_grad) {
                            T* dst = dn->grad.data() + (d * g.h + h) * c;
                            for (std::size_t k = 0; k < c; ++k) dst[k] += gr[k];
                        }
                        if (wn->needs_grad) {
                            T* dst = wn->grad.data() + (w * g.d + d) * c;
                            for (std::size_t k = 0; k < c; ++k) dst[k] += gr[k];
                        }
                    }
        });
    auto hv = tpv.plane_hw.values();
    auto dv = tpv.plane_dh.values();
    auto wv = tpv.plane_wd.values();
    auto ov = out.values_mut();
    for (std::size_t h = 0; h < g.h; ++h)
        for (std::size_t w = 0; w < g.w; ++w)
            for (std::size_t d = 0; d < g.d; ++d) {
                T* dst = ov.data() + (((h * g.w + w) * g.d) + d) * c;
                const T* ph = hv.data() + (h * g.w + w) * c;
                const T* pd = dv.data() + (d * g.h + h) * c;
                const T* pw = wv.data() + (w * g.d + d) * c;
                for (std::size_t k = 0; k < c; ++k) dst[k] = (ph[k] + pd[k]) + pw[k];
            }
    return out;
}

}  // namespace s2tpv
