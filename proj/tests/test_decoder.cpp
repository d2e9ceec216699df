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

#include "s2tpv/decoder.hpp"

using namespace s2tpv;

namespace {

TpvState random_state(const GridDims& g, std::size_t c, std::uint64_t seed) {
    Rng rng(seed);
    TpvState s;
    s.plane_hw = Tensor::gaussian({g.h, g.w, c}, rng, 1.0);
    s.plane_dh = Tensor::gaussian({g.d, g.h, c}, rng, 1.0);
    s.plane_wd = Tensor::gaussian({g.w, g.d, c}, rng, 1.0);
    return s;
}

Vec3 voxel_center(const EgoBounds& b, const GridDims& g, std::size_t h, std::size_t w,
                  std::size_t d) {
    return {b.x0 + (h + 0.5) * b.ext_x() / g.h, b.y0 + (w + 0.5) * b.ext_y() / g.w,
            b.z0 + (d + 0.5) * b.ext_z() / g.d};
}

}  // namespace

TEST_CASE("zero planes and zero biases give a constant logit field") {
    GridDims g{3, 3, 2};
    Rng rng(1);
    auto dec = init_decoder<double>(4, 8, 5, rng);
    auto s = TpvState::zeros(g, 4);
    auto logits = decode_voxels(s, dec);
    CHECK(logits.shape() == Shape{3, 3, 2, 5});
    // every voxel carries linear2(softplus(0 * w1 + 0)) = ln2 * column sums
    std::vector<double> want(5, 0.0);
    for (std::size_t j = 0; j < 5; ++j) {
        double acc = 0;
        for (std::size_t i = 0; i < 8; ++i) acc += std::log(2.0) * dec.w2.at({i, j});
        want[j] = acc;
    }
    for (std::size_t v = 0; v < 3 * 3 * 2; ++v)
        for (std::size_t j = 0; j < 5; ++j)
            CHECK(logits.values()[v * 5 + j] == doctest::Approx(want[j]).epsilon(1e-12));
}

TEST_CASE("17 classes cover the full semantic set plus empty") {
    Rng rng(2);
    auto dec = init_decoder<double>(16, 32, 17, rng);
    CHECK(dec.n_classes() == 17);
    auto s = random_state({4, 4, 2}, 16, 3);
    auto logits = decode_voxels(s, dec);
    CHECK(logits.shape() == Shape{4, 4, 2, 17});
}

TEST_CASE("decoder parameter count is exactly the two-layer budget") {
    Rng rng(3);
    const std::size_t c = 8, c_mid = 16, k = 9;
    auto dec = init_decoder<double>(c, c_mid, k, rng);
    CHECK(dec.param_count() == c * c_mid + c_mid + c_mid * k + k);
}

TEST_CASE("voxel logits match a scalar-math oracle") {
    GridDims g{3, 4, 2};
    EgoBounds b;
    Rng rng(5);
    const std::size_t c = 4, c_mid = 8, k = 3;
    auto dec = init_decoder<double>(c, c_mid, k, rng);
    auto s = random_state(g, c, 7);
    auto logits = decode_voxels(s, dec);
    for (std::size_t trial = 0; trial < 20; ++trial) {
        const std::size_t h = trial % g.h, w = (trial / g.h) % g.w, d = trial % g.d;
        // scalar forward: plane reads, then the MLP by hand
        std::vector<double> feat(c);
        for (std::size_t cc = 0; cc < c; ++cc)
            feat[cc] = s.plane_hw.at({h, w, cc}) + s.plane_dh.at({d, h, cc}) +
                       s.plane_wd.at({w, d, cc});
        std::vector<double> hidden(c_mid);
        for (std::size_t j = 0; j < c_mid; ++j) {
            double acc = dec.b1.values()[j];
            for (std::size_t i = 0; i < c; ++i) acc += feat[i] * dec.w1.at({i, j});
            hidden[j] = std::log1p(std::exp(-std::abs(acc))) + std::max(acc, 0.0);
        }
        std::size_t argmax_oracle = 0;
        double best = -1e300;
        for (std::size_t j = 0; j < k; ++j) {
            double acc = dec.b2.values()[j];
            for (std::size_t i = 0; i < c_mid; ++i) acc += hidden[i] * dec.w2.at({i, j});
            CHECK(std::abs(logits.at({h, w, d, j}) - acc) < 1e-9);
            if (acc > best) {
                best = acc;
                argmax_oracle = j;
            }
        }
        std::size_t argmax_impl = 0;
        for (std::size_t j = 1; j < k; ++j)
            if (logits.at({h, w, d, j}) > logits.at({h, w, d, argmax_impl})) argmax_impl = j;
        CHECK(argmax_impl == argmax_oracle);
    }
}

TEST_CASE("decode_points at voxel centers equals decode_voxels bit-exactly") {
    GridDims g{4, 3, 2};
    EgoBounds b;
    Rng rng(11);
    auto dec = init_decoder<double>(4, 8, 5, rng);
    auto s = random_state(g, 4, 13);
    auto vox = decode_voxels(s, dec);
    std::vector<Vec3> centers;
    for (std::size_t h = 0; h < g.h; ++h)
        for (std::size_t w = 0; w < g.w; ++w)
            for (std::size_t d = 0; d < g.d; ++d) centers.push_back(voxel_center(b, g, h, w, d));
    auto pts = decode_points(s, centers, dec, b);
    REQUIRE(pts.shape() == Shape{g.h * g.w * g.d, 5});
    for (std::size_t i = 0; i < pts.size(); ++i) CHECK(pts.values()[i] == vox.values()[i]);
}

TEST_CASE("decode_points handles an empty point set") {
    Rng rng(17);
    auto dec = init_decoder<double>(4, 8, 5, rng);
    auto s = random_state({2, 2, 2}, 4, 19);
    auto out = decode_points(s, {}, dec, EgoBounds{});
    CHECK(out.shape() == Shape{0, 5});
}

TEST_CASE("decode_points against a per-point scalar oracle at random points") {
    GridDims g{4, 4, 2};
    EgoBounds b;
    Rng rng(23);
    const std::size_t c = 4, c_mid = 8, k = 3;
    auto dec = init_decoder<double>(c, c_mid, k, rng);
    auto s = random_state(g, c, 29);
    std::vector<Vec3> pts;
    for (int i = 0; i < 20; ++i)
        pts.push_back({b.x0 + rng.uniform() * b.ext_x(), b.y0 + rng.uniform() * b.ext_y(),
                       b.z0 + rng.uniform() * b.ext_z()});
    auto got = decode_points(s, pts, dec, b);
    auto feats = aggregate_points(s, pts, b);  // aggregation is oracle-checked separately
    for (std::size_t n = 0; n < pts.size(); ++n) {
        std::vector<double> hidden(c_mid);
        for (std::size_t j = 0; j < c_mid; ++j) {
            double acc = dec.b1.values()[j];
            for (std::size_t i = 0; i < c; ++i) acc += feats.values()[n * c + i] * dec.w1.at({i, j});
            hidden[j] = std::log1p(std::exp(-std::abs(acc))) + std::max(acc, 0.0);
        }
        for (std::size_t j = 0; j < k; ++j) {
            double acc = dec.b2.values()[j];
            for (std::size_t i = 0; i < c_mid; ++i) acc += hidden[i] * dec.w2.at({i, j});
            CHECK(std::abs(got.values()[n * k + j] - acc) < 1e-9);
        }
    }
}

TEST_CASE("point head can drop the empty column while sharing weights") {
    GridDims g{3, 3, 2};
    EgoBounds b;
    Rng rng(31);
    auto dec = init_decoder<double>(4, 8, 9, rng);  // 8 semantic + empty
    auto s = random_state(g, 4, 37);
    std::vector<Vec3> pts{{0.3, -0.4, 1.0}, {2.0, 2.0, 0.5}};
    auto full = decode_points(s, pts, dec, b);
    auto sliced = decode_points(s, pts, dec, b, 8);
    CHECK(sliced.shape() == Shape{2, 8});
    for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t j = 0; j < 8; ++j)
            CHECK(sliced.values()[n * 8 + j] == full.values()[n * 9 + j]);
}

TEST_CASE("decoder gradients reach planes and weights") {
    GridDims g{3, 3, 2};
    Rng rng(41);
    auto dec = init_decoder<double>(4, 8, 3, rng);
    TpvState s;
    s.plane_hw = Tensor::gaussian({g.h, g.w, 4}, rng, 1.0, true);
    s.plane_dh = Tensor::gaussian({g.d, g.h, 4}, rng, 1.0, true);
    s.plane_wd = Tensor::gaussian({g.w, g.d, 4}, rng, 1.0, true);
    auto target = Tensor::gaussian({g.h, g.w, g.d, 3}, rng, 1.0);
    auto f = [&] { return sum_all(mul(decode_voxels(s, dec), target)); };
    CHECK(grad_check(f, {s.plane_hw, s.plane_dh, s.plane_wd, dec.w1, dec.b1, dec.w2, dec.b2},
                     1e-6) < 1e-4);
}
