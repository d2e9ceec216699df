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
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "s2tpv/attention.hpp"
#include "s2tpv/geometry.hpp"
#include "s2tpv/tensor.hpp"

namespace s2tpv {

// ---------------------------------------------------------------------------
// World description
// ---------------------------------------------------------------------------

struct WorldObject {
    enum class Kind { box, cylinder };
    Kind kind = Kind::box;
    int class_id = 0;
    double x = 0, y = 0, z = 0;  // box: center; cylinder: base center
    double yaw = 0;
    double sx = 1, sy = 1, sz = 1;  // box: full extents; cylinder: sx = radius, sz = height
};

struct TrajectoryPoint {
    double t = 0;
    double x = 0, y = 0, yaw = 0;  // planar ego motion
};

struct LidarFan {
    std::size_t azimuth_steps = 120;
    std::size_t elevation_rows = 24;
    double elev_min_deg = -75.0;
    double elev_max_deg = 2.0;
    double height = 3.0;  // mount height above the ego origin
    double max_range = 40.0;
};

struct CameraRigSpec {
    std::size_t n_cameras = 6;
    int image_size = 64;
    double height = 1.6;
    double fov_deg = 90.0;
    double radius = 0.8;  // mount ring radius around the ego origin
};

/// Deterministic synthetic world: ground plane, a set of static solids and a
/// planar ego trajectory.
struct WorldSpec {
    std::uint64_t seed = 0;
    std::size_t n_semantic = 8;  // classes 0..n_semantic-1; `empty` comes after
    int ground_class = 0;
    std::vector<WorldObject> objects;
    std::vector<TrajectoryPoint> trajectory;
    LidarFan lidar;
    CameraRigSpec rig;

    void validate() const {
        if (trajectory.empty()) throw ConfigError("world: empty trajectory");
        for (std::size_t i = 1; i < trajectory.size(); ++i)
            if (!(trajectory[i].t > trajectory[i - 1].t))
                throw ConfigError("world: trajectory timestamps must strictly increase");
        for (const auto& o : objects)
            if (o.class_id < 0 || static_cast<std::size_t>(o.class_id) >= n_semantic)
                throw ConfigError("world: object class out of range");
    }
};

// ---------------------------------------------------------------------------
// Ray casting
// ---------------------------------------------------------------------------

struct RayHit {
    bool hit = false;
    double t = std::numeric_limits<double>::infinity();
    int class_id = -1;
};

namespace detail {

inline constexpr double kRayEps = 1e-9;

inline std::optional<double> ray_box(const WorldObject& o, const Vec3& origin, const Vec3& dir) {
    // into the box frame
    const double c = std::cos(-o.yaw), s = std::sin(-o.yaw);
    const Vec3 rel{origin.x - o.x, origin.y - o.y, origin.z - o.z};
    const Vec3 ob{c * rel.x - s * rel.y, s * rel.x + c * rel.y, rel.z};
    const Vec3 db{c * dir.x - s * dir.y, s * dir.x + c * dir.y, dir.z};
    const double half[3] = {o.sx * 0.5, o.sy * 0.5, o.sz * 0.5};
    const double po[3] = {ob.x, ob.y, ob.z};
    const double pd[3] = {db.x, db.y, db.z};
    double t0 = kRayEps, t1 = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a) {
        if (std::abs(pd[a]) < 1e-15) {
            if (po[a] < -half[a] || po[a] > half[a]) return std::nullopt;
            continue;
        }
        double ta = (-half[a] - po[a]) / pd[a];
        double tb = (half[a] - po[a]) / pd[a];
        if (ta > tb) std::swap(ta, tb);
        t0 = std::max(t0, ta);
        t1 = std::min(t1, tb);
        if (t0 > t1) return std::nullopt;
    }
    return t0;
}

inline std::optional<double> ray_cylinder(const WorldObject& o, const Vec3& origin,
                                          const Vec3& dir) {
    const double r = o.sx;
    const double z0 = o.z, z1 = o.z + o.sz;
    const double ox = origin.x - o.x, oy = origin.y - o.y;
    double best = std::numeric_limits<double>::infinity();
    // lateral surface
    const double a = dir.x * dir.x + dir.y * dir.y;
    if (a > 1e-15) {
        const double b = 2.0 * (ox * dir.x + oy * dir.y);
        const double cq = ox * ox + oy * oy - r * r;
        const double disc = b * b - 4 * a * cq;
        if (disc >= 0) {
            const double sq = std::sqrt(disc);
            for (double t : {(-b - sq) / (2 * a), (-b + sq) / (2 * a)}) {
                if (t <= kRayEps) continue;
                const double z = origin.z + t * dir.z;
                if (z >= z0 && z <= z1) best = std::min(best, t);
            }
        }
    }
    // caps
    for (double zcap : {z0, z1}) {
        if (std::abs(dir.z) < 1e-15) continue;
        const double t = (zcap - origin.z) / dir.z;
        if (t <= kRayEps) continue;
        const double hx = ox + t * dir.x, hy = oy + t * dir.y;
        if (hx * hx + hy * hy <= r * r) best = std::min(best, t);
    }
    if (!std::isfinite(best)) return std::nullopt;
    return best;
}

}  // namespace detail

/// Nearest intersection of a global-frame ray with the world geometry.
inline RayHit cast_ray(const WorldSpec& world, const Vec3& origin, const Vec3& dir) {
    RayHit hit;
    if (dir.z < 0) {  // ground plane z = 0
        const double t = -origin.z / dir.z;
        if (t > detail::kRayEps) {
            hit.hit = true;
            hit.t = t;
            hit.class_id = world.ground_class;
        }
    }
    for (const auto& o : world.objects) {
        const auto t = o.kind == WorldObject::Kind::box ? detail::ray_box(o, origin, dir)
                                                        : detail::ray_cylinder(o, origin, dir);
        if (t && *t < hit.t) {
            hit.hit = true;
            hit.t = *t;
            hit.class_id = o.class_id;
        }
    }
    return hit;
}

// ---------------------------------------------------------------------------
// Scene frames
// ---------------------------------------------------------------------------

struct LidarPoint {
    Vec3 ego_xyz;
    int class_id = 0;
};

/// One timestep of the synthetic world: rig, pose and LiDAR-like returns. The
/// producing world rides along so feature rendering can ray cast.
struct SceneFrame {
    double timestamp = 0;
    std::size_t t_index = 0;
    RigidTransform ego_pose;  // ego -> global, planar
    std::vector<CameraModel> cameras;
    std::vector<LidarPoint> lidar_points;
    WorldSpec world;
};

/// Surround rig: cameras on a ring, evenly spaced in yaw, camera frame
/// x-right / y-down / z-forward.
inline std::vector<CameraModel> make_camera_rig(const CameraRigSpec& rig) {
    const Mat3 base{{0, 0, 1, -1, 0, 0, 0, -1, 0}};  // camera axes -> ego axes
    const double f =
        (rig.image_size * 0.5) / std::tan(rig.fov_deg * 0.5 * M_PI / 180.0);
    std::vector<CameraModel> cams;
    for (std::size_t k = 0; k < rig.n_cameras; ++k) {
        const double yaw = 2.0 * M_PI * static_cast<double>(k) / static_cast<double>(rig.n_cameras);
        const RigidTransform ext{Mat3::rot_z(yaw) * base,
                                 {std::cos(yaw) * rig.radius, std::sin(yaw) * rig.radius,
                                  rig.height}};
        cams.push_back(CameraModel::pinhole(f, rig.image_size, rig.image_size, ext));
    }
    return cams;
}

/// LiDAR sweep: an azimuth/elevation fan cast from the mount point above the
/// ego origin; first hits return ego-frame points with surface classes,
/// misses are dropped.
inline std::vector<LidarPoint> sample_lidar(const SceneFrame& frame, std::size_t n_rays,
                                            std::uint64_t seed,
                                            std::optional<LidarFan> fan_override = std::nullopt) {
    if (n_rays == 0) throw ConfigError("sample_lidar: n_rays must be positive");
    const LidarFan fan = fan_override.value_or(frame.world.lidar);
    const std::size_t rows = std::min<std::size_t>(fan.elevation_rows, n_rays);
    const std::size_t az_steps = std::max<std::size_t>(1, n_rays / rows);
    Rng rng(seed ^ (frame.t_index * 0x9e3779b97f4a7c15ull));
    const double az_jitter = rng.uniform();
    std::vector<LidarPoint> out;
    const Vec3 origin_ego{0, 0, fan.height};
    const Vec3 origin = frame.ego_pose.apply(origin_ego);
    const RigidTransform global_to_ego = frame.ego_pose.inverse();
    for (std::size_t row = 0; row < rows; ++row) {
        const double el =
            rows == 1 ? fan.elev_min_deg
                      : fan.elev_min_deg + (fan.elev_max_deg - fan.elev_min_deg) *
                                               static_cast<double>(row) /
                                               static_cast<double>(rows - 1);
        const double el_rad = el * M_PI / 180.0;
        for (std::size_t k = 0; k < az_steps; ++k) {
            const double az = 2.0 * M_PI * (static_cast<double>(k) + az_jitter) /
                              static_cast<double>(az_steps);
            const Vec3 dir_ego{std::cos(el_rad) * std::cos(az), std::cos(el_rad) * std::sin(az),
                               std::sin(el_rad)};
            const Vec3 dir = frame.ego_pose.rotation * dir_ego;
            const RayHit hit = cast_ray(frame.world, origin, dir);
            if (!hit.hit || hit.t > fan.max_range) continue;
            const Vec3 global_pt = origin + dir * hit.t;
            out.push_back({global_to_ego.apply(global_pt), hit.class_id});
        }
    }
    return out;
}

/// Deterministic frame for trajectory step t: rig, pose and LiDAR returns.
inline SceneFrame generate_scene(const WorldSpec& spec, std::size_t t) {
    spec.validate();
    if (t >= spec.trajectory.size())
        throw std::out_of_range("generate_scene: timestep " + std::to_string(t) +
                                " outside trajectory of length " +
                                std::to_string(spec.trajectory.size()));
    SceneFrame frame;
    frame.world = spec;
    frame.t_index = t;
    frame.timestamp = spec.trajectory[t].t;
    frame.ego_pose =
        RigidTransform::planar(spec.trajectory[t].x, spec.trajectory[t].y, spec.trajectory[t].yaw);
    frame.cameras = make_camera_rig(spec.rig);
    frame.lidar_points = sample_lidar(frame, spec.lidar.azimuth_steps * spec.lidar.elevation_rows,
                                      spec.seed);
    return frame;
}

// ---------------------------------------------------------------------------
// Feature rendering (backbone substitute)
// ---------------------------------------------------------------------------

// The embedding that lifts raw class/depth channels to the model width is a
// fixed pretrained-backbone stand-in, shared by every scene and dataset.
inline constexpr std::uint64_t kBackboneSeed = 0x52545056ull;  // "S2TPV" flavored

template <class T>
std::vector<T> backbone_embedding(std::size_t raw_ch, std::size_t feat_dim) {
    Rng rng(kBackboneSeed);
    std::vector<T> e(raw_ch * feat_dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(raw_ch));
    for (auto& v : e) v = static_cast<T>(rng.normal() * scale);
    return e;
}

/// First-hit class id and inverse depth per pixel of one camera. Small
/// enough to cache per (world, timestep).
struct RaycastImage {
    std::size_t height = 0, width = 0;
    std::vector<std::int16_t> class_id;  // -1 on miss
    std::vector<double> inv_depth;       // 1 / (1 + t), 0 on miss
};

inline RaycastImage raycast_camera(const SceneFrame& frame, const CameraModel& cam) {
    RaycastImage img;
    img.height = static_cast<std::size_t>(cam.image_height);
    img.width = static_cast<std::size_t>(cam.image_width);
    img.class_id.assign(img.height * img.width, -1);
    img.inv_depth.assign(img.height * img.width, 0.0);
    const double fx = cam.intrinsics(0, 0), fy = cam.intrinsics(1, 1);
    const double cx = cam.intrinsics(0, 2), cy = cam.intrinsics(1, 2);
    const Mat3 rot = frame.ego_pose.rotation * cam.extrinsic.rotation;
    const Vec3 origin = frame.ego_pose.apply(cam.extrinsic.translation);
    for (std::size_t v = 0; v < img.height; ++v) {
        for (std::size_t u = 0; u < img.width; ++u) {
            const Vec3 dir_cam{(static_cast<double>(u) + 0.5 - cx) / fx,
                               (static_cast<double>(v) + 0.5 - cy) / fy, 1.0};
            const Vec3 dir = rot * (dir_cam * (1.0 / dir_cam.norm()));
            const RayHit hit = cast_ray(frame.world, origin, dir);
            if (hit.hit) {
                img.class_id[v * img.width + u] = static_cast<std::int16_t>(hit.class_id);
                img.inv_depth[v * img.width + u] = 1.0 / (1.0 + hit.t);
            }
        }
    }
    return img;
}

/// Lifts a ray-cast image (class one-hot + inverse depth channels) through
/// the fixed backbone embedding, then average-pools per pyramid level.
template <class T>
ValueBankT<T> embed_pyramid(const RaycastImage& img, std::size_t n_scale, std::size_t feat_dim,
                            std::size_t n_semantic) {
    if (n_scale < 1) throw ConfigError("render_features: n_scale must be >= 1");
    const std::size_t raw_ch = n_semantic + 1;
    const std::vector<T> embed = backbone_embedding<T>(raw_ch, feat_dim);
    std::vector<T> level0(img.height * img.width * feat_dim, T(0));
    for (std::size_t px = 0; px < img.height * img.width; ++px) {
        T* dst = level0.data() + px * feat_dim;
        const int cls = img.class_id[px];
        if (cls < 0) continue;
        const T* class_row = embed.data() + static_cast<std::size_t>(cls) * feat_dim;
        const T* depth_row = embed.data() + (raw_ch - 1) * feat_dim;
        const T idepth = static_cast<T>(img.inv_depth[px]);
        for (std::size_t j = 0; j < feat_dim; ++j) dst[j] = class_row[j] + idepth * depth_row[j];
    }
    ValueBankT<T> pyramid;
    pyramid.push_back(TensorT<T>::from_data({img.height, img.width, feat_dim}, std::move(level0)));
    for (std::size_t lvl = 1; lvl < n_scale; ++lvl) {
        const auto& prev = pyramid.back();
        const std::size_t ph = prev.shape()[0], pw = prev.shape()[1];
        if (ph % 2 || pw % 2)
            throw ConfigError("render_features: level extents must halve evenly");
        std::vector<T> pooled((ph / 2) * (pw / 2) * feat_dim, T(0));
        auto pv = prev.values();
        for (std::size_t i = 0; i < ph / 2; ++i)
            for (std::size_t j = 0; j < pw / 2; ++j)
                for (std::size_t c = 0; c < feat_dim; ++c) {
                    T acc = T(0);
                    for (std::size_t di = 0; di < 2; ++di)
                        for (std::size_t dj = 0; dj < 2; ++dj)
                            acc += pv[((2 * i + di) * pw + (2 * j + dj)) * feat_dim + c];
                    pooled[(i * (pw / 2) + j) * feat_dim + c] = acc / T(4);
                }
        pyramid.push_back(TensorT<T>::from_data({ph / 2, pw / 2, feat_dim}, std::move(pooled)));
    }
    return pyramid;
}

/// Ray-casts class one-hot + inverse depth per pixel, embeds linearly to
/// feat_dim, then average-pools per pyramid level. Level j halves level j-1.
template <class T>
std::vector<ValueBankT<T>> render_features(const SceneFrame& frame, std::size_t n_scale,
                                           std::size_t feat_dim) {
    std::vector<ValueBankT<T>> pyramids;
    pyramids.reserve(frame.cameras.size());
    for (const auto& cam : frame.cameras)
        pyramids.push_back(
            embed_pyramid<T>(raycast_camera(frame, cam), n_scale, feat_dim, frame.world.n_semantic));
    return pyramids;
}

// ---------------------------------------------------------------------------
// Voxel ground truth
// ---------------------------------------------------------------------------

/// Ego-space semantic voxel grid; `empty` is class id n_semantic.
struct VoxelLabelGrid {
    GridDims dims;
    EgoBounds bounds;
    std::uint16_t n_semantic = 0;
    std::vector<std::uint16_t> labels;  // h-major, then w, then d

    std::uint16_t empty_class() const { return n_semantic; }
    std::size_t n_classes() const { return n_semantic + 1u; }
    std::uint16_t at(std::size_t h, std::size_t w, std::size_t d) const {
        return labels[(h * dims.w + w) * dims.d + d];
    }
};

/// Majority class per voxel over the contained points, ties to the smallest
/// class id; voxels without points become `empty`.
inline VoxelLabelGrid voxelize_labels(const std::vector<LidarPoint>& points, const GridDims& dims,
                                      const EgoBounds& bounds, std::size_t n_semantic) {
    VoxelLabelGrid grid;
    grid.dims = dims;
    grid.bounds = bounds;
    grid.n_semantic = static_cast<std::uint16_t>(n_semantic);
    const std::size_t n_vox = dims.h * dims.w * dims.d;
    grid.labels.assign(n_vox, grid.empty_class());
    std::vector<std::uint32_t> counts(n_vox * n_semantic, 0);
    const double sx = bounds.ext_x() / dims.h;
    const double sy = bounds.ext_y() / dims.w;
    const double sz = bounds.ext_z() / dims.d;
    for (const auto& p : points) {
        const double fx = (p.ego_xyz.x - bounds.x0) / sx;
        const double fy = (p.ego_xyz.y - bounds.y0) / sy;
        const double fz = (p.ego_xyz.z - bounds.z0) / sz;
        if (fx < 0 || fy < 0 || fz < 0) continue;
        const auto h = static_cast<std::size_t>(fx);
        const auto w = static_cast<std::size_t>(fy);
        const auto d = static_cast<std::size_t>(fz);
        if (h >= dims.h || w >= dims.w || d >= dims.d) continue;
        if (p.class_id < 0 || static_cast<std::size_t>(p.class_id) >= n_semantic)
            throw ConfigError("voxelize_labels: point class out of range");
        counts[((h * dims.w + w) * dims.d + d) * n_semantic +
               static_cast<std::size_t>(p.class_id)]++;
    }
    for (std::size_t v = 0; v < n_vox; ++v) {
        std::uint32_t best = 0;
        for (std::size_t c = 0; c < n_semantic; ++c) {
            const std::uint32_t n = counts[v * n_semantic + c];
            if (n > best) {
                best = n;
                grid.labels[v] = static_cast<std::uint16_t>(c);
            }
        }
    }
    return grid;
}

// ---------------------------------------------------------------------------
// Prediction dump: "S2TPVGRID" binary grid of class ids
// ---------------------------------------------------------------------------

inline constexpr char kGridMagic[9] = {'S', '2', 'T', 'P', 'V', 'G', 'R', 'I', 'D'};

inline void save_label_grid(const std::string& path, const VoxelLabelGrid& grid) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open grid dump for writing: " + path);
    os.write(kGridMagic, sizeof(kGridMagic));
    auto put_u64 = [&](std::uint64_t v) {
        unsigned char b[8];
        for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
        os.write(reinterpret_cast<const char*>(b), 8);
    };
    put_u64(grid.dims.h);
    put_u64(grid.dims.w);
    put_u64(grid.dims.d);
    put_u64(grid.n_classes());
    for (std::uint16_t v : grid.labels) {
        os.put(static_cast<char>(v & 0xff));
        os.put(static_cast<char>((v >> 8) & 0xff));
    }
    if (!os) throw IoError("grid dump write failed: " + path);
}

inline VoxelLabelGrid load_label_grid(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open grid dump: " + path);
    char magic[sizeof(kGridMagic)];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kGridMagic, sizeof(magic)) != 0)
        throw IoError("bad grid magic: " + path);
    auto get_u64 = [&]() {
        unsigned char b[8];
        is.read(reinterpret_cast<char*>(b), 8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    };
    VoxelLabelGrid grid;
    grid.dims.h = get_u64();
    grid.dims.w = get_u64();
    grid.dims.d = get_u64();
    const std::uint64_t n_classes = get_u64();
    grid.n_semantic = static_cast<std::uint16_t>(n_classes - 1);
    grid.labels.resize(grid.dims.h * grid.dims.w * grid.dims.d);
    for (auto& v : grid.labels) {
        const int lo = is.get(), hi = is.get();
        v = static_cast<std::uint16_t>(lo | (hi << 8));
    }
    if (!is) throw IoError("truncated grid dump: " + path);
    return grid;
}

// ---------------------------------------------------------------------------
// Scene file format: versioned key/value text document
// ---------------------------------------------------------------------------

inline void save_world(const std::string& path, const WorldSpec& spec) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot open scene file for writing: " + path);
    os.precision(17);
    os << "s2tpvscene 1\n";
    os << "seed " << spec.seed << "\n";
    os << "n_semantic " << spec.n_semantic << "\n";
    os << "ground_class " << spec.ground_class << "\n";
    os << "lidar " << spec.lidar.azimuth_steps << " " << spec.lidar.elevation_rows << " "
       << spec.lidar.elev_min_deg << " " << spec.lidar.elev_max_deg << " " << spec.lidar.height
       << " " << spec.lidar.max_range << "\n";
    os << "rig " << spec.rig.n_cameras << " " << spec.rig.image_size << " " << spec.rig.height
       << " " << spec.rig.fov_deg << " " << spec.rig.radius << "\n";
    for (const auto& o : spec.objects)
        os << "object " << (o.kind == WorldObject::Kind::box ? "box" : "cylinder") << " "
           << o.class_id << " " << o.x << " " << o.y << " " << o.z << " " << o.yaw << " " << o.sx
           << " " << o.sy << " " << o.sz << "\n";
    for (const auto& p : spec.trajectory)
        os << "trajectory " << p.t << " " << p.x << " " << p.y << " " << p.yaw << "\n";
    if (!os) throw IoError("scene file write failed: " + path);
}

inline WorldSpec load_world(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open scene file: " + path);
    std::string line;
    if (!std::getline(is, line) || line.rfind("s2tpvscene ", 0) != 0)
        throw IoError("not a scene file: " + path);
    if (line != "s2tpvscene 1") throw IoError("unsupported scene file version: " + line);
    WorldSpec spec;
    spec.n_semantic = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string key;
        ls >> key;
        if (key == "seed") ls >> spec.seed;
        else if (key == "n_semantic") ls >> spec.n_semantic;
        else if (key == "ground_class") ls >> spec.ground_class;
        else if (key == "lidar")
            ls >> spec.lidar.azimuth_steps >> spec.lidar.elevation_rows >>
                spec.lidar.elev_min_deg >> spec.lidar.elev_max_deg >> spec.lidar.height >>
                spec.lidar.max_range;
        else if (key == "rig")
            ls >> spec.rig.n_cameras >> spec.rig.image_size >> spec.rig.height >>
                spec.rig.fov_deg >> spec.rig.radius;
        else if (key == "object") {
            WorldObject o;
            std::string kind;
            ls >> kind >> o.class_id >> o.x >> o.y >> o.z >> o.yaw >> o.sx >> o.sy >> o.sz;
            if (kind == "box") o.kind = WorldObject::Kind::box;
            else if (kind == "cylinder") o.kind = WorldObject::Kind::cylinder;
            else throw IoError("unknown object kind: " + kind);
            spec.objects.push_back(o);
        } else if (key == "trajectory") {
            TrajectoryPoint p;
            ls >> p.t >> p.x >> p.y >> p.yaw;
            spec.trajectory.push_back(p);
        } else {
            throw IoError("unknown scene file key: " + key);
        }
        if (!ls) throw IoError("malformed scene line: " + line);
    }
    if (spec.n_semantic == 0) throw IoError("scene file missing n_semantic: " + path);
    spec.validate();
    return spec;
}

// ---------------------------------------------------------------------------
// Benchmark worlds
// ---------------------------------------------------------------------------

// Semantic palette used by the generated worlds.
enum DeskClass : int {
    kGround = 0,
    kCar = 1,
    kTruck = 2,
    kBus = 3,
    kPedestrian = 4,
    kBarrier = 5,
    kManmade = 6,
    kVegetation = 7,
};

/// Occlusion benchmark scene: a fixed wall hides a randomized target object
/// from the final ego pose while earlier poses see it plainly; everything
/// visible at the final step is identical across seeds, so only temporal
/// fusion can recover the target.
inline WorldSpec make_occlusion_world(std::uint64_t scene_seed) {
    Rng rng(scene_seed * 0x2545F4914F6CDD1Dull + 1);
    WorldSpec spec;
    spec.seed = scene_seed;
    spec.n_semantic = 8;
    spec.ground_class = kGround;
    // mount the sweep above the wall and keep the fan dense enough that the
    // narrow over-the-wall window onto the hidden target always catches rays
    spec.lidar.height = 3.5;
    spec.lidar.azimuth_steps = 256;
    spec.lidar.elevation_rows = 48;

    // occluder wall: spans y in [-4, 2], 2.2 m tall, 6 m ahead of the final pose
    spec.objects.push_back({WorldObject::Kind::box, kBarrier, 6.0, -1.0, 1.1, 0.0, 0.3, 6.0, 2.2});

    // hidden target: class and position vary per scene
    const int target_class = kCar + static_cast<int>(rng.index(4));
    const double tx = 9.0 + rng.uniform() * 1.5;
    const double ty = -1.2 + rng.uniform() * 2.25;
    spec.objects.push_back({WorldObject::Kind::box, target_class, tx, ty, 1.0, 0.0, 4.2, 1.9, 2.0});

    // fixed context shared by every scene
    spec.objects.push_back({WorldObject::Kind::cylinder, kVegetation, -6.0, -6.0, 0.0, 0.0, 0.8, 0.0, 3.0});
    spec.objects.push_back({WorldObject::Kind::box, kManmade, -8.0, 5.0, 1.25, 0.2, 2.5, 2.5, 2.5});
    spec.objects.push_back({WorldObject::Kind::box, kManmade, 4.0, -9.0, 1.0, 0.0, 3.0, 2.0, 2.0});

    // approach from +y facing the travel direction; the final step closes the
    // sightline past the wall edge
    for (int k = 0; k < 7; ++k)
        spec.trajectory.push_back({static_cast<double>(k), 0.0, 48.0 - 6.0 * k, -M_PI / 2});
    spec.trajectory.push_back({7.0, 0.0, 0.0, -M_PI / 2});
    return spec;
}

/// Generic randomized world for smoke datasets: ground, a few solids, a
/// gently curving trajectory.
inline WorldSpec make_random_world(std::uint64_t scene_seed) {
    Rng rng(scene_seed * 0x9E3779B97F4A7C15ull + 7);
    WorldSpec spec;
    spec.seed = scene_seed;
    spec.n_semantic = 8;
    spec.ground_class = kGround;
    const std::size_t n_obj = 3 + rng.index(4);
    for (std::size_t i = 0; i < n_obj; ++i) {
        WorldObject o;
        o.class_id = 1 + static_cast<int>(rng.index(7));
        o.x = rng.uniform() * 20.0 - 10.0;
        o.y = rng.uniform() * 20.0 - 10.0;
        o.yaw = rng.uniform() * M_PI;
        if (rng.uniform() < 0.3) {
            o.kind = WorldObject::Kind::cylinder;
            o.z = 0.0;
            o.sx = 0.4 + rng.uniform();
            o.sz = 1.0 + rng.uniform() * 3.0;
        } else {
            o.kind = WorldObject::Kind::box;
            o.sx = 1.0 + rng.uniform() * 3.5;
            o.sy = 1.0 + rng.uniform() * 2.0;
            o.sz = 1.0 + rng.uniform() * 2.0;
            o.z = o.sz * 0.5;
        }
        spec.objects.push_back(o);
    }
    double x = -8.0 + rng.uniform() * 2.0, y = -2.0 + rng.uniform() * 4.0, yaw = 0.0;
    for (int k = 0; k < 8; ++k) {
        spec.trajectory.push_back({static_cast<double>(k), x, y, yaw});
        yaw += (rng.uniform() - 0.5) * 0.2;
        x += 2.0 * std::cos(yaw);
        y += 2.0 * std::sin(yaw);
    }
    return spec;
}

}  // namespace s2tpv
