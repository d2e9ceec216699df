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

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "s2tpv/tensor.hpp"

namespace s2tpv {

enum class Task { sop, lidar_seg };

/// Mean negative log softmax probability of the target class.
template <class T>
TensorT<T> cross_entropy(const TensorT<T>& logits, const std::vector<int>& targets) {
    if (logits.rank() != 2) throw DimError("cross_entropy: logits must be [N, K]");
    const std::size_t n = logits.shape()[0], k = logits.shape()[1];
    if (targets.size() != n) throw DimError("cross_entropy: target count mismatch");
    if (n == 0) return TensorT<T>::scalar(T(0));
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= k)
            throw ConfigError("cross_entropy: target class out of range");

    auto out = TensorT<T>::make_op({1}, {logits}, [ln = logits.node(), targets, n, k](auto& nd) {
        ln->ensure_grad();
        const T g = nd.grad[0] / static_cast<T>(n);
        for (std::size_t r = 0; r < n; ++r) {
            const T* row = ln->value.data() + r * k;
            T mx = row[0];
            for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
            T denom = T(0);
            for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - mx);
            for (std::size_t c = 0; c < k; ++c) {
                const T p = std::exp(row[c] - mx) / denom;
                const T onehot = static_cast<std::size_t>(targets[r]) == c ? T(1) : T(0);
                ln->grad[r * k + c] += g * (p - onehot);
            }
        }
    });
    auto lv = logits.values();
    double acc = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
        const T* row = lv.data() + r * k;
        T mx = row[0];
        for (std::size_t c = 1; c < k; ++c) mx = std::max(mx, row[c]);
        T denom = T(0);
        for (std::size_t c = 0; c < k; ++c) denom += std::exp(row[c] - mx);
        acc += std::log(static_cast<double>(denom)) + static_cast<double>(mx) -
               static_cast<double>(row[static_cast<std::size_t>(targets[r])]);
    }
    out.values_mut()[0] = static_cast<T>(acc / static_cast<double>(n));
    return out;
}

/// Lovász-softmax over the classes present in the targets. Per class the
/// prediction errors are sorted descending and folded with the gradient of
/// the Jaccard extension of the sorted ground-truth mask; the result averages
/// over present classes. Gradients treat the sort permutation as fixed.
template <class T>
TensorT<T> lovasz_softmax(const TensorT<T>& probs, const std::vector<int>& targets) {
    if (probs.rank() != 2) throw DimError("lovasz_softmax: probs must be [N, K]");
    const std::size_t n = probs.shape()[0], k = probs.shape()[1];
    if (targets.size() != n) throw DimError("lovasz_softmax: target count mismatch");
    if (n == 0) return TensorT<T>::scalar(T(0));
    for (int t : targets)
        if (t < 0 || static_cast<std::size_t>(t) >= k)
            throw ConfigError("lovasz_softmax: target class out of range");

    std::vector<int> present;
    for (std::size_t c = 0; c < k; ++c)
        if (std::any_of(targets.begin(), targets.end(),
                        [c](int t) { return static_cast<std::size_t>(t) == c; }))
            present.push_back(static_cast<int>(c));

    // Per present class: sorting permutation and the Jaccard-extension
    // gradient over sorted positions; both reused verbatim in backward.
    struct ClassPlan {
        int c;
        std::vector<std::size_t> order;  // sample indices, errors descending
        std::vector<double> grad;        // lovasz grad at sorted positions
    };
    std::vector<ClassPlan> plans;
    auto pv = probs.values();
    double total = 0.0;
    for (int c : present) {
        ClassPlan plan;
        plan.c = c;
        std::vector<double> errors(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double p = static_cast<double>(pv[i * k + static_cast<std::size_t>(c)]);
            errors[i] = targets[i] == c ? 1.0 - p : p;
        }
        plan.order.resize(n);
        std::iota(plan.order.begin(), plan.order.end(), std::size_t(0));
        std::stable_sort(plan.order.begin(), plan.order.end(),
                         [&](std::size_t a, std::size_t b) { return errors[a] > errors[b]; });
        double gts = 0;
        for (std::size_t i = 0; i < n; ++i) gts += targets[i] == c ? 1.0 : 0.0;
        plan.grad.resize(n);
        double cum_gt = 0, cum_not = 0, prev_jac = 0;
        double loss_c = 0;
        for (std::size_t pos = 0; pos < n; ++pos) {
            const std::size_t i = plan.order[pos];
            const double is_gt = targets[i] == c ? 1.0 : 0.0;
            cum_gt += is_gt;
            cum_not += 1.0 - is_gt;
            const double inter = gts - cum_gt;
            const double uni = gts + cum_not;
            const double jac = 1.0 - inter / uni;
            plan.grad[pos] = jac - prev_jac;
            prev_jac = jac;
            loss_c += errors[i] * plan.grad[pos];
        }
        total += loss_c;
        plans.push_back(std::move(plan));
    }
    const double inv_present = 1.0 / static_cast<double>(present.size());

    auto out = TensorT<T>::make_op(
        {1}, {probs}, [pn = probs.node(), plans, targets, k, inv_present](auto& nd) {
            pn->ensure_grad();
            const double g = static_cast<double>(nd.grad[0]) * inv_present;
            for (const auto& plan : plans) {
                for (std::size_t pos = 0; pos < plan.order.size(); ++pos) {
                    const std::size_t i = plan.order[pos];
                    const double sign = targets[i] == plan.c ? -1.0 : 1.0;
                    pn->grad[i * k + static_cast<std::size_t>(plan.c)] +=
                        static_cast<T>(g * sign * plan.grad[pos]);
                }
            }
        });
    out.values_mut()[0] = static_cast<T>(total * inv_present);
    return out;
}

/// Equal-weighted task supervision. SOP pairs the Lovász loss on voxels with
/// cross-entropy on LiDAR points; LiDAR segmentation reverses the pairing.
template <class T>
TensorT<T> task_loss(const TensorT<T>& voxel_logits, const std::vector<int>& voxel_gt,
                     const TensorT<T>& point_logits, const std::vector<int>& point_gt,
                     Task task) {
    if (task == Task::sop) {
        auto lov = lovasz_softmax(softmax(voxel_logits, 1), voxel_gt);
        auto ce = cross_entropy(point_logits, point_gt);
        return add(lov, ce);
    }
    auto ce = cross_entropy(voxel_logits, voxel_gt);
    auto lov = point_gt.empty() ? TensorT<T>::scalar(T(0))
                                : lovasz_softmax(softmax(point_logits, 1), point_gt);
    return add(lov, ce);
}

}  // namespace s2tpv
