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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "s2tpv/tpv.hpp"

using namespace s2tpv;

namespace {

TpvState random_state(const GridDims& g, std::size_t c, std::uint64_t seed,
                      bool requires_grad = false) {
    Rng rng(seed);
    TpvState s;
    s.plane_hw = Tensor::gaussian({g.h, g.w, c}, rng, 1.0, requires_grad);
    s.plane_dh = Tensor::gaussian({g.d, g.h, c}, rng, 1.0, requires_grad);
    s.plane_wd = Tensor::gaussian({g.w, g.d, c}, rng, 1.0, requires_grad);
    return s;
}

Vec3 voxel_center(const EgoBounds& b, const GridDims& g, std::size_t h, std::size_t w,
                  std::size_t d) {
    return {b.x0 + (h + 0.5) * b.ext_x() / g.h, b.y0 + (w + 0.5) * b.ext_y() / g.w,
            b.z0 + (d + 0.5) * b.ext_z() / g.d};
}

}  // namespace

TEST_CASE("query counts follow H*W + D*H + W*D") {
    CHECK(tpv_query_count(100, 100, 8) == 11600);
    CHECK(100 * 100 * 8 == 80000);  // versus the dense voxel lattice
    CHECK(tpv_query_count(4, 4, 2) == 32);

    struct Cfg {
        std::size_t h, w, d;
    };
    for (Cfg cfg : {Cfg{100, 100, 8}, Cfg{32, 32, 4}, Cfg{4, 4, 2}, Cfg{1, 1, 1}, Cfg{7, 3, 5}}) {
        auto q = init_queries<double>(cfg.h, cfg.w, cfg.d, 8, 1);
        const std::size_t positions = q.query_hw.size() / 8 + q.query_dh.size() / 8 +
                                      q.query_wd.size() / 8;
        CHECK(positions == tpv_query_count(cfg.h, cfg.w, cfg.d));
    }
}

TEST_CASE("init_queries is seed-deterministic with zero positional embeddings") {
    auto a = init_queries<double>(4, 4, 2, 8, 42);
    auto b = init_queries<double>(4, 4, 2, 8, 42);
    CHECK(std::equal(a.query_hw.values().begin(), a.query_hw.values().end(),
                     b.query_hw.values().begin()));
    CHECK(std::equal(a.query_wd.values().begin(), a.query_wd.values().end(),
                     b.query_wd.values().begin()));
    for (double v : a.pos_hw.values()) CHECK(v == 0.0);
    for (double v : a.pos_dh.values()) CHECK(v == 0.0);

    auto c = init_queries<double>(4, 4, 2, 8, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.query_hw.size(); ++i)
        any_diff = any_diff || a.query_hw.values()[i] != c.query_hw.values()[i];
    CHECK(any_diff);
}

TEST_CASE("cross_view_refs enumeration for a 2x2x2 grid") {
    GridDims g{2, 2, 2};
    auto refs = cross_view_refs(PlaneId::HW, 0, 0, g, 2);
    REQUIRE(refs.size() == 5);
    CHECK(refs[0].plane == PlaneId::HW);
    CHECK(refs[0].row == 0.0);
    CHECK(refs[0].col == 0.0);
    // DH points {(0,0),(1,0)}
    CHECK(refs[1].plane == PlaneId::DH);
    CHECK(refs[1].row == 0.0);
    CHECK(refs[1].col == 0.0);
    CHECK(refs[2].row == 1.0);
    CHECK(refs[2].col == 0.0);
    // WD points {(0,0),(0,1)}
    CHECK(refs[3].plane == PlaneId::WD);
    CHECK(refs[3].row == 0.0);
    CHECK(refs[3].col == 0.0);
    CHECK(refs[4].row == 0.0);
    CHECK(refs[4].col == 1.0);
}

TEST_CASE("cross_view_refs collapse on a degenerate 1x1x1 grid") {
    GridDims g{1, 1, 1};
    for (PlaneId p : {PlaneId::HW, PlaneId::DH, PlaneId::WD}) {
        auto refs = cross_view_refs(p, 0, 0, g, 4);
        for (const auto& r : refs) {
            CHECK(r.row == 0.0);
            CHECK(r.col == 0.0);
        }
    }
}

TEST_CASE("cross_view_refs always lie inside the target plane") {
    Rng rng(3);
    GridDims g{6, 5, 3};
    auto extent = [&](PlaneId p, bool row_axis) -> double {
        switch (p) {
            case PlaneId::HW: return row_axis ? g.h : g.w;
            case PlaneId::DH: return row_axis ? g.d : g.h;
            default: return row_axis ? g.w : g.d;
        }
    };
    for (int trial = 0; trial < 1000; ++trial) {
        const PlaneId p = static_cast<PlaneId>(trial % 3);
        const std::size_t rows = static_cast<std::size_t>(extent(p, true));
        const std::size_t cols = static_cast<std::size_t>(extent(p, false));
        const std::size_t a = rng.index(rows);
        const std::size_t b = rng.index(cols);
        const std::size_t n_cross = 1 + rng.index(6);
        for (const auto& r : cross_view_refs(p, a, b, g, n_cross)) {
            CHECK(r.row >= 0.0);
            CHECK(r.col >= 0.0);
            CHECK(r.row <= extent(r.plane, true) - 1.0);
            CHECK(r.col <= extent(r.plane, false) - 1.0);
        }
    }
}

TEST_CASE("cross_view_refs rejects out-of-grid cells") {
    GridDims g{2, 2, 2};
    CHECK_THROWS_AS(cross_view_refs(PlaneId::HW, 2, 0, g, 1), ConfigError);
}

TEST_CASE("aggregate_point basics") {
    EgoBounds b;
    GridDims g{4, 4, 2};
    auto zero_state = TpvState::zeros(g, 3);
    auto out = aggregate_point(zero_state, {0.0, 0.0, 1.0}, b);
    for (double v : out.values()) CHECK(v == 0.0);

    // single-plane case: value v at one HW node, query at that cell center
    TpvState s = TpvState::zeros(g, 3);
    s.plane_hw.set({2, 1, 0}, 7.5);
    s.plane_hw.set({2, 1, 2}, -1.25);
    const Vec3 center = voxel_center(b, g, 2, 1, 0);
    auto got = aggregate_point(s, {center.x, center.y, 0.123}, b);
    CHECK(got.values()[0] == 7.5);
    CHECK(got.values()[1] == 0.0);
    CHECK(got.values()[2] == -1.25);
}

TEST_CASE("aggregate_point rejects non-finite coordinates") {
    EgoBounds b;
    auto s = random_state({2, 2, 2}, 2, 1);
    CHECK_THROWS_AS(aggregate_point(s, {std::nan(""), 0, 0}, b), NumericError);
}

TEST_CASE("aggregate_point equals a hand-rolled sum of three plane samples") {
    EgoBounds b;
    GridDims g{4, 5, 3};
    Rng rng(9);
    auto s = random_state(g, 4, 11);
    for (int trial = 0; trial < 40; ++trial) {
        const Vec3 p{b.x0 + rng.uniform() * b.ext_x() * 1.2 - 0.1 * b.ext_x(),
                     b.y0 + rng.uniform() * b.ext_y() * 1.2 - 0.1 * b.ext_y(),
                     b.z0 + rng.uniform() * b.ext_z() * 1.2 - 0.1 * b.ext_z()};
        const double gx = (p.x - b.x0) / (b.ext_x() / g.h) - 0.5;
        const double gy = (p.y - b.y0) / (b.ext_y() / g.w) - 0.5;
        const double gz = (p.z - b.z0) / (b.ext_z() / g.d) - 0.5;
        auto s_hw = grid_sample2d(s.plane_hw, Tensor::from_data({1, 2}, {gx, gy}));
        auto s_dh = grid_sample2d(s.plane_dh, Tensor::from_data({1, 2}, {gz, gx}));
        auto s_wd = grid_sample2d(s.plane_wd, Tensor::from_data({1, 2}, {gy, gz}));
        auto got = aggregate_point(s, p, b);
        for (std::size_t c = 0; c < 4; ++c) {
            const double want = s_hw.values()[c] + s_dh.values()[c] + s_wd.values()[c];
            CHECK(std::abs(got.values()[c] - want) < 1e-9);
        }
    }
}

TEST_CASE("aggregate_voxels constant planes give 3 per channel") {
    TpvState s{Tensor::full({2, 2, 4}, 1.0), Tensor::full({2, 2, 4}, 1.0),
               Tensor::full({2, 2, 4}, 1.0)};
    auto out = aggregate_voxels(s);
    CHECK(out.shape() == Shape{2, 2, 2, 4});
    for (double v : out.values()) CHECK(v == 3.0);
}

TEST_CASE("aggregate_voxels output shape at paper scale") {
    auto s = TpvState::zeros({100, 100, 8}, 2);
    auto out = aggregate_voxels(s);
    CHECK(out.shape() == Shape{100, 100, 8, 2});
}

TEST_CASE("aggregate_voxels matches the naive per-voxel loop bit-exactly") {
    EgoBounds b;
    GridDims g{4, 4, 2};
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto s = random_state(g, 3, seed);
        auto fast = aggregate_voxels(s);
        for (std::size_t h = 0; h < g.h; ++h)
            for (std::size_t w = 0; w < g.w; ++w)
                for (std::size_t d = 0; d < g.d; ++d) {
                    auto pt = aggregate_point(s, voxel_center(b, g, h, w, d), b);
                    for (std::size_t c = 0; c < 3; ++c)
                        CHECK(fast.at({h, w, d, c}) == pt.values()[c]);
                }
    }
}

TEST_CASE("aggregation is linear in the plane features") {
    EgoBounds b;
    GridDims g{3, 4, 2};
    auto sa = random_state(g, 3, 21);
    auto sb = random_state(g, 3, 22);
    const double alpha = 0.7, beta = -1.3;
    TpvState mixed{add(scale(sa.plane_hw, alpha), scale(sb.plane_hw, beta)),
                   add(scale(sa.plane_dh, alpha), scale(sb.plane_dh, beta)),
                   add(scale(sa.plane_wd, alpha), scale(sb.plane_wd, beta))};
    Rng rng(23);
    for (int trial = 0; trial < 30; ++trial) {
        const Vec3 p{b.x0 + rng.uniform() * b.ext_x(), b.y0 + rng.uniform() * b.ext_y(),
                     b.z0 + rng.uniform() * b.ext_z()};
        auto fa = aggregate_point(sa, p, b);
        auto fb = aggregate_point(sb, p, b);
        auto fm = aggregate_point(mixed, p, b);
        for (std::size_t c = 0; c < 3; ++c)
            CHECK(std::abs(fm.values()[c] - (alpha * fa.values()[c] + beta * fb.values()[c])) <
                  1e-9);
    }
}

TEST_CASE("aggregate_voxels gradients flow to all three planes") {
    GridDims g{3, 3, 2};
    auto s = random_state(g, 2, 31, true);
    Rng rng(32);
    auto w = Tensor::gaussian({g.h, g.w, g.d, 2}, rng, 1.0);
    auto f = [&] { return sum_all(mul(aggregate_voxels(s), w)); };
    CHECK(grad_check(f, {s.plane_hw, s.plane_dh, s.plane_wd}, 1e-6) < 1e-4);
}
