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
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "s2tpv/eval.hpp"
#include "s2tpv/loss.hpp"
#include "s2tpv/model.hpp"
#include "s2tpv/train.hpp"

namespace s2tpv {

/// Fast built-in oracle battery behind `s2tpv selftest`: one line per check,
/// true iff everything held. The full suites live in the test binaries; this
/// covers the load-bearing identities on a fresh install.
inline bool run_selftest(std::ostream& os = std::cout) {
    struct Check {
        std::string name;
        std::function<bool()> fn;
    };
    std::vector<Check> checks;

    checks.push_back({"vvt matches the expanded closed form", [] {
        Rng rng(1);
        for (int i = 0; i < 20; ++i) {
            const Mat3 r1 = Mat3::rot_z(rng.uniform() * 6.28) * Mat3::rot_x(rng.uniform());
            const Mat3 r2 = Mat3::rot_z(rng.uniform() * 6.28) * Mat3::rot_y(rng.uniform());
            const Mat3 r3 = Mat3::rot_z(rng.uniform() * 6.28);
            RigidTransform cam{r1, {rng.normal(), rng.normal(), rng.normal()}};
            RigidTransform past{r2, {rng.normal(), rng.normal(), rng.normal()}};
            RigidTransform cur{r3, {rng.normal(), rng.normal(), rng.normal()}};
            const auto v = vvt(cam, past, cur);
            const Mat3 ri_t = cam.rotation.transpose();
            const Mat3 rp_t = past.rotation.transpose();
            const Vec3 want = ri_t * (rp_t * cur.translation) -
                              ri_t * (rp_t * past.translation) - ri_t * cam.translation;
            if (std::abs(v.translation.x - want.x) > 1e-9 ||
                std::abs(v.translation.y - want.y) > 1e-9 ||
                std::abs(v.translation.z - want.z) > 1e-9)
                return false;
        }
        return true;
    }});

    checks.push_back({"softmax normalizes and grid sampling is exact on nodes", [] {
        Rng rng(2);
        auto x = Tensor::gaussian({6, 5}, rng, 3.0);
        auto y = softmax(x, 1);
        for (std::size_t r = 0; r < 6; ++r) {
            double s = 0;
            for (std::size_t c = 0; c < 5; ++c) s += y.at({r, c});
            if (std::abs(s - 1.0) > 1e-6) return false;
        }
        auto plane = Tensor::gaussian({4, 4, 3}, rng, 1.0);
        auto sampled = grid_sample2d(plane, Tensor::from_data({1, 2}, {2.0, 1.0}));
        for (std::size_t c = 0; c < 3; ++c)
            if (sampled.values()[c] != plane.at({2, 1, c})) return false;
        return true;
    }});

    checks.push_back({"degenerate deformable attention returns the node value", [] {
        Rng rng(3);
        auto p = init_deform_attn<double>(4, 2, 1, 1, rng);
        auto eye = Tensor::zeros({4, 4}, true);
        for (std::size_t i = 0; i < 4; ++i) eye.set({i, i}, 1.0);
        p.value_w = eye;
        p.output_w = eye;
        auto map = Tensor::gaussian({4, 4, 4}, rng, 1.0);
        auto q = Tensor::gaussian({4}, rng, 1.0);
        RefSet refs;
        refs.map_of_slot = {0};
        refs.coords = Tensor::from_data({1, 1, 2}, {2.0, 3.0});
        auto out = deform_attn(q, refs, ValueBankT<double>{map}, p);
        for (std::size_t c = 0; c < 4; ++c)
            if (std::abs(out.values()[c] - map.at({2, 3, c})) > 1e-12) return false;
        return true;
    }});

    checks.push_back({"query count follows H*W + D*H + W*D", [] {
        return tpv_query_count(100, 100, 8) == 11600 && tpv_query_count(4, 4, 2) == 32;
    }});

    checks.push_back({"gradient check on a small attention stack", [] {
        Rng rng(4);
        auto p = init_deform_attn<double>(4, 2, 1, 2, rng);
        p.offset_w = Tensor::gaussian(p.offset_w.shape(), rng, 0.3, true);
        p.weight_w = Tensor::gaussian(p.weight_w.shape(), rng, 0.3, true);
        auto map = Tensor::gaussian({4, 4, 4}, rng, 1.0, true);
        auto q = Tensor::gaussian({3, 4}, rng, 1.0, true);
        std::vector<double> coords;
        for (int i = 0; i < 3 * 2; ++i) {
            coords.push_back(0.3 + rng.uniform() * 2.2);
            coords.push_back(0.3 + rng.uniform() * 2.2);
        }
        RefSet refs;
        refs.map_of_slot = {0, 0};
        refs.coords = Tensor::from_data({3, 2, 2}, coords);
        auto target = Tensor::gaussian({3, 4}, rng, 1.0);
        auto f = [&] {
            return sum_all(mul(deform_attn(q, refs, ValueBankT<double>{map}, p), target));
        };
        return grad_check(f, {q, map, p.offset_w, p.weight_w, p.value_w, p.output_w}, 1e-6) <
               1e-4;
    }});

    checks.push_back({"lovasz-softmax closed forms", [] {
        auto half = lovasz_softmax(Tensor::from_data({1, 2}, {0.5, 0.5}), {0});
        auto perfect = lovasz_softmax(Tensor::from_data({2, 2}, {1, 0, 0, 1}), {0, 1});
        auto uniform_ce = cross_entropy(Tensor::zeros({1, 4}), {2});
        return std::abs(half.item() - 0.5) < 1e-12 && std::abs(perfect.item()) < 1e-12 &&
               std::abs(uniform_ce.item() - std::log(4.0)) < 1e-12;
    }});

    checks.push_back({"miou hand case", [] {
        ConfusionMatrix cm(2);
        cm.at(0, 0) = 1;
        cm.at(0, 1) = 1;
        cm.at(1, 0) = 1;
        cm.at(1, 1) = 1;
        auto r = miou(cm, {0, 1});
        return std::abs(r.miou - 1.0 / 3) < 1e-12;
    }});

    checks.push_back({"voxelization majority vote and empty default", [] {
        GridDims g{2, 2, 1};
        EgoBounds b{0, 2, 0, 2, 0, 1};
        std::vector<LidarPoint> pts{{{0.5, 0.5, 0.5}, 3},
                                    {{0.4, 0.5, 0.5}, 1},
                                    {{0.6, 0.5, 0.5}, 1}};
        auto grid = voxelize_labels(pts, g, b, 4);
        return grid.at(0, 0, 0) == 1 && grid.at(1, 1, 0) == grid.empty_class();
    }});

    checks.push_back({"two-step training is bit-deterministic", [] {
        EncoderConfig cfg;
        cfg.h = 4;
        cfg.w = 4;
        cfg.d = 2;
        cfg.embed_dim = 8;
        cfg.n_layers = 1;
        cfg.temporal_steps = 1;
        cfg.n_ref = 2;
        cfg.n_cross = 1;
        cfg.n_heads = 2;
        cfg.n_points = 1;
        cfg.bounds = EgoBounds{-8, 8, -8, 8, 0, 3.2};
        WorldSpec world = make_random_world(5);
        world.rig.n_cameras = 1;
        world.rig.image_size = 8;
        world.lidar.azimuth_steps = 12;
        world.lidar.elevation_rows = 4;
        auto run = [&] {
            auto model = make_model<double>(cfg, 8, 1, 9);
            TrainConfig tc;
            tc.steps = 2;
            tc.m_train = 1;
            tc.seed = 13;
            auto res = train(model, {world}, tc);
            std::vector<double> out = res.loss_curve;
            for (auto& p : model.params.entries())
                out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
            return out;
        };
        return run() == run();
    }});

    bool all_ok = true;
    for (auto& check : checks) {
        bool ok = false;
        try {
            ok = check.fn();
        } catch (const std::exception& e) {
            os << "[selftest] FAIL " << check.name << " (" << e.what() << ")\n";
            all_ok = false;
            continue;
        }
        os << "[selftest] " << (ok ? "PASS " : "FAIL ") << check.name << "\n";
        all_ok = all_ok && ok;
    }
    return all_ok;
}

}  // namespace s2tpv
