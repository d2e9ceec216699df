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

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "s2tpv/tensor.hpp"

namespace s2tpv {

struct Vec3 {
    double x = 0, y = 0, z = 0;

    Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
    Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
    Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
    double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
    double norm() const { return std::sqrt(dot(*this)); }
};

/// Row-major 3x3 matrix.
struct Mat3 {
    std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

    static Mat3 identity() { return {}; }

    static Mat3 rot_z(double yaw) {
        const double c = std::cos(yaw), s = std::sin(yaw);
        return {{c, -s, 0, s, c, 0, 0, 0, 1}};
    }

    static Mat3 rot_y(double a) {
        const double c = std::cos(a), s = std::sin(a);
        return {{c, 0, s, 0, 1, 0, -s, 0, c}};
    }

    static Mat3 rot_x(double a) {
        const double c = std::cos(a), s = std::sin(a);
        return {{1, 0, 0, 0, c, -s, 0, s, c}};
    }

    double operator()(int r, int c) const { return m[r * 3 + c]; }
    double& operator()(int r, int c) { return m[r * 3 + c]; }

    Mat3 transpose() const {
        Mat3 t;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) t(r, c) = (*this)(c, r);
        return t;
    }

    Mat3 operator*(const Mat3& o) const {
        Mat3 r;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double acc = 0;
                for (int k = 0; k < 3; ++k) acc += (*this)(i, k) * o(k, j);
                r(i, j) = acc;
            }
        return r;
    }

    Vec3 operator*(const Vec3& v) const {
        return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
                m[6] * v.x + m[7] * v.y + m[8] * v.z};
    }

    double det() const {
        return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
               m[2] * (m[3] * m[7] - m[4] * m[6]);
    }
};

/// Rotation + translation; maps points as p' = R p + t.
struct RigidTransform {
    Mat3 rotation;
    Vec3 translation;

    static RigidTransform identity() { return {}; }

    static RigidTransform planar(double x, double y, double yaw, double z = 0.0) {
        return {Mat3::rot_z(yaw), {x, y, z}};
    }

    bool rotation_orthonormal(double tol = 1e-9) const {
        const Mat3 rtr = rotation.transpose() * rotation;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) {
                const double want = (r == c) ? 1.0 : 0.0;
                if (std::abs(rtr(r, c) - want) > tol) return false;
            }
        return std::abs(rotation.det() - 1.0) <= tol;
    }

    void require_orthonormal(const char* what) const {
        if (!rotation_orthonormal())
            throw NumericError(std::string("non-orthonormal rotation in ") + what);
    }

    Vec3 apply(const Vec3& p) const { return rotation * p + translation; }

    RigidTransform inverse() const {
        const Mat3 rt = rotation.transpose();
        return {rt, (rt * translation) * -1.0};
    }

    /// this ∘ other: apply `other` first.
    RigidTransform compose(const RigidTransform& other) const {
        return {rotation * other.rotation, rotation * other.translation + translation};
    }
};

/// Pinhole camera: upper-triangular intrinsics, camera->ego extrinsic, pixel
/// bounds. Camera frame is x-right, y-down, z-forward.
struct CameraModel {
    Mat3 intrinsics;
    RigidTransform extrinsic;  // camera -> ego
    int image_width = 0;
    int image_height = 0;

    static CameraModel pinhole(double focal_px, int width, int height,
                               const RigidTransform& cam_to_ego) {
        CameraModel c;
        c.intrinsics = {{focal_px, 0, width * 0.5, 0, focal_px, height * 0.5, 0, 0, 1}};
        c.extrinsic = cam_to_ego;
        c.image_width = width;
        c.image_height = height;
        return c;
    }
};

/// Metric extents of ego space covered by the TPV / voxel grids.
struct EgoBounds {
    double x0 = -12.8, x1 = 12.8;
    double y0 = -12.8, y1 = 12.8;
    double z0 = 0.0, z1 = 3.2;

    double ext_x() const { return x1 - x0; }
    double ext_y() const { return y1 - y0; }
    double ext_z() const { return z1 - z0; }

    void require_nondegenerate() const {
        if (!(x1 > x0) || !(y1 > y0) || !(z1 > z0))
            throw NumericError("degenerate ego bounds");
    }
};

enum class PlaneId : int { HW = 0, DH = 1, WD = 2 };

struct GridDims {
    std::size_t h = 0, w = 0, d = 0;
};

/// Per-cell pillars of 3D ego-space reference points for one TPV plane:
/// n_ref points per cell, strictly increasing along the plane-orthogonal axis.
struct EgoRefPoints {
    PlaneId plane = PlaneId::HW;
    std::size_t cells = 0;  // number of plane cells, row-major over the plane
    std::size_t n_ref = 0;
    std::vector<Vec3> points;  // cells * n_ref, pillar-major per cell

    const Vec3& at(std::size_t cell, std::size_t k) const { return points[cell * n_ref + k]; }
};

// ---------------------------------------------------------------------------
// Virtual View Transformation: expresses current-ego points in the frame of
// camera i as mounted at a past ego pose. Composed from homogeneous inverses;
// the expanded closed form is the test oracle.
// ---------------------------------------------------------------------------

inline RigidTransform vvt(const RigidTransform& camera_extrinsic, const RigidTransform& past_pose,
                          const RigidTransform& current_pose) {
    camera_extrinsic.require_orthonormal("vvt camera extrinsic");
    past_pose.require_orthonormal("vvt past pose");
    current_pose.require_orthonormal("vvt current pose");
    return camera_extrinsic.inverse().compose(past_pose.inverse()).compose(current_pose);
}

// ---------------------------------------------------------------------------
// Reference-point lifting
// ---------------------------------------------------------------------------

namespace detail {

inline double cell_center(double lo, double hi, std::size_t n, std::size_t i) {
    return lo + (static_cast<double>(i) + 0.5) * (hi - lo) / static_cast<double>(n);
}

}  // namespace detail

/// Uniformly samples n_ref reference points per plane cell at cell-center
/// spacing along the plane-orthogonal axis.
inline EgoRefPoints sample_ego_refs(PlaneId plane, const GridDims& grid, const EgoBounds& bounds,
                                    std::size_t n_ref) {
    bounds.require_nondegenerate();
    if (n_ref < 1) throw ConfigError("sample_ego_refs: n_ref must be >= 1");
    EgoRefPoints out;
    out.plane = plane;
    out.n_ref = n_ref;
    auto cx = [&](std::size_t h) { return detail::cell_center(bounds.x0, bounds.x1, grid.h, h); };
    auto cy = [&](std::size_t w) { return detail::cell_center(bounds.y0, bounds.y1, grid.w, w); };
    auto cz = [&](std::size_t d) { return detail::cell_center(bounds.z0, bounds.z1, grid.d, d); };
    switch (plane) {
        case PlaneId::HW:
            out.cells = grid.h * grid.w;
            out.points.reserve(out.cells * n_ref);
            for (std::size_t h = 0; h < grid.h; ++h)
                for (std::size_t w = 0; w < grid.w; ++w)
                    for (std::size_t k = 0; k < n_ref; ++k)
                        out.points.push_back(
                            {cx(h), cy(w), detail::cell_center(bounds.z0, bounds.z1, n_ref, k)});
            break;
        case PlaneId::DH:
            out.cells = grid.d * grid.h;
            out.points.reserve(out.cells * n_ref);
            for (std::size_t d = 0; d < grid.d; ++d)
                for (std::size_t h = 0; h < grid.h; ++h)
                    for (std::size_t k = 0; k < n_ref; ++k)
                        out.points.push_back(
                            {cx(h), detail::cell_center(bounds.y0, bounds.y1, n_ref, k), cz(d)});
            break;
        case PlaneId::WD:
            out.cells = grid.w * grid.d;
            out.points.reserve(out.cells * n_ref);
            for (std::size_t w = 0; w < grid.w; ++w)
                for (std::size_t d = 0; d < grid.d; ++d)
                    for (std::size_t k = 0; k < n_ref; ++k)
                        out.points.push_back(
                            {detail::cell_center(bounds.x0, bounds.x1, n_ref, k), cy(w), cz(d)});
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Projection
// ---------------------------------------------------------------------------

inline constexpr double kZNear = 0.1;

struct ProjectedRefs {
    std::vector<double> pixels;      // N * 2, (u, v); sentinel (-1, -1) when invalid
    std::vector<std::uint8_t> valid;  // N
};

/// Projects ego points through a virtual view into pixel coordinates.
/// Valid iff the camera-space depth exceeds z_near and the pixel lands inside
/// the image. Invalid points keep a harmless sentinel rather than being
/// dropped.
inline ProjectedRefs project_refs(const EgoRefPoints& ego_pts, const RigidTransform& virtual_view,
                                  const CameraModel& camera) {
    const std::size_t n = ego_pts.points.size();
    ProjectedRefs out;
    out.pixels.assign(n * 2, -1.0);
    out.valid.assign(n, 0);
    const Mat3& k_mat = camera.intrinsics;
    for (std::size_t i = 0; i < n; ++i) {
        const Vec3& p = ego_pts.points[i];
        if (!std::isfinite(p.x) || !std::isfinite(p.y) || !std::isfinite(p.z))
            throw NumericError("project_refs: non-finite input point");
        const Vec3 pc = virtual_view.apply(p);
        if (pc.z <= kZNear) continue;
        const Vec3 hom = k_mat * pc;
        const double u = hom.x / hom.z;
        const double v = hom.y / hom.z;
        if (u < 0.0 || v < 0.0 || u >= static_cast<double>(camera.image_width) ||
            v >= static_cast<double>(camera.image_height))
            continue;
        out.pixels[i * 2 + 0] = u;
        out.pixels[i * 2 + 1] = v;
        out.valid[i] = 1;
    }
    return out;
}

/// Per-cell set of camera indices whose image contains at least one of the
/// cell's reference points.
inline std::vector<std::vector<int>> hit_views(const EgoRefPoints& ego_pts,
                                               const std::vector<CameraModel>& cameras,
                                               const std::vector<RigidTransform>& virtual_views) {
    if (cameras.empty()) throw ConfigError("hit_views: empty camera list");
    if (cameras.size() != virtual_views.size())
        throw ConfigError("hit_views: cameras/views length mismatch");
    std::vector<std::vector<int>> hit(ego_pts.cells);
    for (std::size_t ci = 0; ci < cameras.size(); ++ci) {
        const ProjectedRefs proj = project_refs(ego_pts, virtual_views[ci], cameras[ci]);
        for (std::size_t cell = 0; cell < ego_pts.cells; ++cell) {
            for (std::size_t k = 0; k < ego_pts.n_ref; ++k) {
                if (proj.valid[cell * ego_pts.n_ref + k]) {
                    hit[cell].push_back(static_cast<int>(ci));
                    break;
                }
            }
        }
    }
    return hit;
}

// ---------------------------------------------------------------------------
// BEV warp (the W-variant's temporal alignment)
// ---------------------------------------------------------------------------

/// Back-projects each current-frame BEV cell center into the previous ego
/// frame and bilinearly samples prev_bev there; cells landing outside the
/// previous grid become zero. Differentiable w.r.t. prev_bev.
template <class T>
TensorT<T> warp_bev(const TensorT<T>& prev_bev, const RigidTransform& prev_pose,
                    const RigidTransform& cur_pose, const EgoBounds& bounds) {
    if (prev_bev.rank() != 3) throw DimError("warp_bev: plane must be [H, W, C]");
    prev_pose.require_orthonormal("warp_bev prev pose");
    cur_pose.require_orthonormal("warp_bev cur pose");
    const std::size_t grid_h = prev_bev.shape()[0];
    const std::size_t grid_w = prev_bev.shape()[1];
    const RigidTransform cur_to_prev = prev_pose.inverse().compose(cur_pose);
    const double step_x = bounds.ext_x() / static_cast<double>(grid_h);
    const double step_y = bounds.ext_y() / static_cast<double>(grid_w);

    std::vector<T> coords(grid_h * grid_w * 2);
    for (std::size_t h = 0; h < grid_h; ++h) {
        for (std::size_t w = 0; w < grid_w; ++w) {
            const Vec3 cur_pt{detail::cell_center(bounds.x0, bounds.x1, grid_h, h),
                              detail::cell_center(bounds.y0, bounds.y1, grid_w, w), 0.0};
            const Vec3 prev_pt = cur_to_prev.apply(cur_pt);
            coords[(h * grid_w + w) * 2 + 0] = static_cast<T>((prev_pt.x - bounds.x0) / step_x - 0.5);
            coords[(h * grid_w + w) * 2 + 1] = static_cast<T>((prev_pt.y - bounds.y0) / step_y - 0.5);
        }
    }
    auto pts = TensorT<T>::from_data({grid_h * grid_w, 2}, std::move(coords));
    auto sampled = grid_sample2d(prev_bev, pts);
    return reshape(sampled, prev_bev.shape());
}

}  // namespace s2tpv
