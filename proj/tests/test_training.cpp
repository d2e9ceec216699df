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
#include <filesystem>
#include <numeric>
#include <set>

#include "s2tpv/train.hpp"

using namespace s2tpv;

namespace {

// Independent Lovász-extension oracle built on set arithmetic: prefix sets of
// the descending error order, Jaccard loss of each set against the
// ground-truth mask, telescoped against the sorted errors.
double lovasz_extension_oracle(const std::vector<double>& probs_row_major, std::size_t n,
                               std::size_t k, const std::vector<int>& targets) {
    std::set<int> present(targets.begin(), targets.end());
    if (present.empty()) return 0.0;
    double total = 0.0;
    for (int c : present) {
        std::vector<double> errors(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = probs_row_major[i * k + static_cast<std::size_t>(c)];
            errors[i] = targets[i] == c ? 1.0 - p : p;
        }
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t(0));
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
        auto jaccard_loss_of_prefix = [&](std::size_t len) {
            // prefix set S = first `len` sorted samples; loss = 1 - |GT \ S| / |GT u S|
            std::set<std::size_t> s(order.begin(), order.begin() + len);
            std::size_t gt_minus_s = 0, gt_union_s = s.size();
            for (std::size_t i = 0; i < n; ++i) {
                if (targets[i] != c) continue;
                if (!s.count(i)) ++gt_minus_s;
                if (!s.count(i)) ++gt_union_s;
            }
            if (gt_union_s == 0) return 0.0;
            return 1.0 - static_cast<double>(gt_minus_s) / static_cast<double>(gt_union_s);
        };
        double loss_c = 0.0;
        for (std::size_t pos = 0; pos < n; ++pos)
            loss_c += errors[order[pos]] *
                      (jaccard_loss_of_prefix(pos + 1) - jaccard_loss_of_prefix(pos));
        total += loss_c;
    }
    return total / static_cast<double>(present.size());
}

Tensor random_probs(std::size_t n, std::size_t k, Rng& rng) {
    std::vector<double> vals(n * k);
    for (std::size_t i = 0; i < n; ++i) {
        double denom = 0;
        for (std::size_t c = 0; c < k; ++c) {
            vals[i * k + c] = 0.05 + rng.uniform();
            denom += vals[i * k + c];
        }
        for (std::size_t c = 0; c < k; ++c) vals[i * k + c] /= denom;
    }
    return Tensor::from_data({n, k}, vals);
}

WorldSpec tiny_world(std::uint64_t seed) {
    WorldSpec w = make_random_world(seed);
    w.rig.n_cameras = 1;
    w.rig.image_size = 8;
    w.lidar.azimuth_steps = 12;
    w.lidar.elevation_rows = 4;
    return w;
}

EncoderConfig tiny_config() {
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
    return cfg;
}

}  // namespace

TEST_CASE("cross_entropy closed forms") {
    // confident correct prediction drives the loss toward zero
    auto sharp = cross_entropy(Tensor::from_data({1, 3}, {50.0, 0.0, 0.0}), {0});
    CHECK(sharp.item() < 1e-20);

    auto uniform = cross_entropy(Tensor::from_data({2, 4}, std::vector<double>(8, 0.0)), {1, 3});
    CHECK(uniform.item() == doctest::Approx(std::log(4.0)));

    CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 3}), {3}), ConfigError);
}

TEST_CASE("cross_entropy matches a scalar oracle on random cases") {
    Rng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto logits = Tensor::gaussian({5, 3}, rng, 2.0);
        std::vector<int> targets;
        for (int i = 0; i < 5; ++i) targets.push_back(static_cast<int>(rng.index(3)));
        auto loss = cross_entropy(logits, targets);
        double want = 0;
        for (std::size_t i = 0; i < 5; ++i) {
            double denom = 0;
            for (std::size_t c = 0; c < 3; ++c) denom += std::exp(logits.at({i, c}));
            want += -std::log(std::exp(logits.at({i, static_cast<std::size_t>(targets[i])})) /
                              denom);
        }
        CHECK(loss.item() == doctest::Approx(want / 5.0).epsilon(1e-9));
    }
}

TEST_CASE("cross_entropy gradients pass finite differences") {
    Rng rng(5);
    auto logits = Tensor::gaussian({4, 3}, rng, 1.0, true);
    std::vector<int> targets{0, 2, 1, 1};
    auto f = [&] { return cross_entropy(logits, targets); };
    CHECK(grad_check(f, {logits}, 1e-6) < 1e-4);
}

TEST_CASE("lovasz_softmax closed forms") {
    // perfect one-hot probabilities
    auto perfect = lovasz_softmax(Tensor::from_data({2, 2}, {1, 0, 0, 1}), {0, 1});
    CHECK(perfect.item() == doctest::Approx(0.0));

    // single sample, K=2, p = (0.5, 0.5), target 0: one error of 0.5
    auto half = lovasz_softmax(Tensor::from_data({1, 2}, {0.5, 0.5}), {0});
    CHECK(half.item() == doctest::Approx(0.5));

    // empty input defined as zero
    auto empty = lovasz_softmax(Tensor::zeros({0, 2}), {});
    CHECK(empty.item() == 0.0);
}

TEST_CASE("lovasz_softmax equals the set-arithmetic extension oracle") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.index(8), k = 2 + rng.index(3);
        auto probs = random_probs(n, k, rng);
        std::vector<int> targets;
        for (std::size_t i = 0; i < n; ++i) targets.push_back(static_cast<int>(rng.index(k)));
        auto loss = lovasz_softmax(probs, targets);
        const double want = lovasz_extension_oracle(
            {probs.values().begin(), probs.values().end()}, n, k, targets);
        CHECK(loss.item() == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("lovasz_softmax exhaustive over small labelings") {
    // all labelings of 4 samples over 3 classes against the oracle
    Rng rng(11);
    const std::size_t n = 4, k = 3;
    auto probs = random_probs(n, k, rng);
    std::vector<double> pv(probs.values().begin(), probs.values().end());
    for (int code = 0; code < 81; ++code) {
        std::vector<int> targets(n);
        int c = code;
        for (std::size_t i = 0; i < n; ++i) {
            targets[i] = c % 3;
            c /= 3;
        }
        auto loss = lovasz_softmax(probs, targets);
        CHECK(loss.item() == doctest::Approx(lovasz_extension_oracle(pv, n, k, targets))
                                 .epsilon(1e-9));
    }
}

TEST_CASE("lovasz_softmax binary predictions reduce to the Jaccard distance") {
    // with 0/1 probabilities the extension equals the set-level Jaccard loss
    const std::size_t n = 6, k = 2;
    std::vector<int> targets{0, 0, 1, 0, 1, 1};
    std::vector<int> predicted{0, 1, 1, 1, 1, 0};
    std::vector<double> probs(n * k, 0.0);
    for (std::size_t i = 0; i < n; ++i) probs[i * k + static_cast<std::size_t>(predicted[i])] = 1.0;
    auto loss = lovasz_softmax(Tensor::from_data({n, k}, probs), targets);
    // per class c: jaccard distance between {i: pred=c} and {i: target=c}
    double want = 0;
    for (int c = 0; c < 2; ++c) {
        std::size_t inter = 0, uni = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const bool in_p = predicted[i] == c, in_g = targets[i] == c;
            inter += in_p && in_g;
            uni += in_p || in_g;
        }
        want += 1.0 - static_cast<double>(inter) / static_cast<double>(uni);
    }
    want /= 2.0;
    CHECK(loss.item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("lovasz_softmax stays in [0,1] and rewards target-probability increases") {
    Rng rng(13);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 5, k = 3;
        auto probs = random_probs(n, k, rng);
        std::vector<int> targets;
        for (std::size_t i = 0; i < n; ++i) targets.push_back(static_cast<int>(rng.index(k)));
        const double base = lovasz_softmax(probs, targets).item();
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);

        // push one sample's probability mass toward its target class
        std::vector<double> boosted(probs.values().begin(), probs.values().end());
        const std::size_t i = rng.index(n);
        const auto tc = static_cast<std::size_t>(targets[i]);
        for (std::size_t c = 0; c < k; ++c)
            boosted[i * k + c] = c == tc ? boosted[i * k + c] + 0.9 * (1 - boosted[i * k + c])
                                         : boosted[i * k + c] * 0.1;
        double denom = 0;
        for (std::size_t c = 0; c < k; ++c) denom += boosted[i * k + c];
        for (std::size_t c = 0; c < k; ++c) boosted[i * k + c] /= denom;
        const double better = lovasz_softmax(Tensor::from_data({n, k}, boosted), targets).item();
        CHECK(better <= base + 1e-12);
    }
}

TEST_CASE("lovasz_softmax gradients pass finite differences off tie boundaries") {
    Rng rng(17);
    auto probs = random_probs(6, 3, rng);
    std::vector<int> targets{0, 1, 2, 1, 0, 2};
    // keep clear of sort-order ties so central differences see one linear piece
    auto raw = Tensor::from_data(probs.shape(),
                                 std::vector<double>(probs.values().begin(), probs.values().end()),
                                 true);
    auto f = [&] { return lovasz_softmax(raw, targets); };
    CHECK(grad_check(f, {raw}, 1e-7) < 1e-4);
}

TEST_CASE("task_loss composes and reverses the supervision pairing") {
    Rng rng(19);
    auto vox_logits = Tensor::gaussian({10, 4}, rng, 1.0);
    auto pt_logits = Tensor::gaussian({6, 4}, rng, 1.0);
    std::vector<int> vox_gt, pt_gt;
    for (int i = 0; i < 10; ++i) vox_gt.push_back(static_cast<int>(rng.index(4)));
    for (int i = 0; i < 6; ++i) pt_gt.push_back(static_cast<int>(rng.index(4)));

    auto sop = task_loss(vox_logits, vox_gt, pt_logits, pt_gt, Task::sop);
    const double sop_manual = lovasz_softmax(softmax(vox_logits, 1), vox_gt).item() +
                              cross_entropy(pt_logits, pt_gt).item();
    CHECK(sop.item() == doctest::Approx(sop_manual).epsilon(1e-12));

    auto seg = task_loss(vox_logits, vox_gt, pt_logits, pt_gt, Task::lidar_seg);
    const double seg_manual = cross_entropy(vox_logits, vox_gt).item() +
                              lovasz_softmax(softmax(pt_logits, 1), pt_gt).item();
    CHECK(seg.item() == doctest::Approx(seg_manual).epsilon(1e-12));

    // zeroed point branch leaves the voxel lovasz alone
    auto vox_only = task_loss(vox_logits, vox_gt, Tensor::zeros({0, 4}), {}, Task::sop);
    CHECK(vox_only.item() ==
          doctest::Approx(lovasz_softmax(softmax(vox_logits, 1), vox_gt).item()).epsilon(1e-12));

    // perfect predictions zero both tasks
    std::vector<double> sharp(10 * 4, -200.0);
    for (int i = 0; i < 10; ++i) sharp[i * 4 + vox_gt[i]] = 200.0;
    auto sharp_vox = Tensor::from_data({10, 4}, sharp);
    std::vector<double> sharp_p(6 * 4, -200.0);
    for (int i = 0; i < 6; ++i) sharp_p[i * 4 + pt_gt[i]] = 200.0;
    auto sharp_pt = Tensor::from_data({6, 4}, sharp_p);
    CHECK(task_loss(sharp_vox, vox_gt, sharp_pt, pt_gt, Task::sop).item() < 1e-12);
    CHECK(task_loss(sharp_vox, vox_gt, sharp_pt, pt_gt, Task::lidar_seg).item() < 1e-12);
}

TEST_CASE("training with zero learning rate leaves parameters fixed") {
    auto cfg = tiny_config();
    auto model = make_model<double>(cfg, 8, 1, 3);
    std::vector<double> before;
    for (auto& p : model.params.entries())
        before.insert(before.end(), p.tensor.values().begin(), p.tensor.values().end());
    TrainConfig tc;
    tc.lr = 0.0;
    tc.steps = 3;
    tc.m_train = 1;
    train(model, {tiny_world(1), tiny_world(2)}, tc);
    std::vector<double> after;
    for (auto& p : model.params.entries())
        after.insert(after.end(), p.tensor.values().begin(), p.tensor.values().end());
    CHECK(before == after);
}

TEST_CASE("training is bit-deterministic under a fixed seed") {
    auto cfg = tiny_config();
    auto run = [&] {
        auto model = make_model<double>(cfg, 8, 1, 5);
        TrainConfig tc;
        tc.steps = 4;
        tc.m_train = 1;
        tc.seed = 21;
        auto res = train(model, {tiny_world(3), tiny_world(4)}, tc);
        std::vector<double> out = res.loss_curve;
        for (auto& p : model.params.entries())
            out.insert(out.end(), p.tensor.values().begin(), p.tensor.values().end());
        return out;
    };
    CHECK(run() == run());
}

TEST_CASE("a short toy run reduces the loss") {
    auto cfg = tiny_config();
    auto model = make_model<double>(cfg, 8, 1, 7);
    TrainConfig tc;
    tc.steps = 40;
    tc.m_train = 0;
    tc.seed = 9;
    tc.lr = 5e-3;
    auto res = train(model, {tiny_world(5)}, tc);
    const double first =
        std::accumulate(res.loss_curve.begin(), res.loss_curve.begin() + 5, 0.0) / 5.0;
    const double last =
        std::accumulate(res.loss_curve.end() - 5, res.loss_curve.end(), 0.0) / 5.0;
    CHECK(last < first);
}

TEST_CASE("lidar_seg task trains through the sliced point head") {
    auto cfg = tiny_config();
    auto model = make_model<double>(cfg, 8, 1, 11);
    TrainConfig tc;
    tc.steps = 3;
    tc.task = Task::lidar_seg;
    tc.m_train = 1;
    auto res = train(model, {tiny_world(6)}, tc);
    CHECK(res.loss_curve.size() == 3);
    for (double l : res.loss_curve) CHECK(std::isfinite(l));
}

TEST_CASE("loss curve CSV uses the step,loss layout") {
    TrainResult res;
    res.loss_curve = {1.5, 0.75};
    const std::string path = "loss_curve_test.csv";
    save_loss_curve(path, res);
    std::ifstream is(path);
    std::string line;
    std::getline(is, line);
    CHECK(line == "step,loss");
    std::getline(is, line);
    CHECK(line == "0,1.5");
    std::getline(is, line);
    CHECK(line == "1,0.75");
    std::filesystem::remove(path);
}
