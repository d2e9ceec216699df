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
#include <vector>

#include "s2tpv/tensor.hpp"

namespace s2tpv {

/// Adam with global gradient-norm clipping. Moment buffers follow the
/// parameter store's insertion order.
template <class T>
class AdamT {
public:
    struct Options {
        double lr = 2e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double clip_norm = 1.0;  // <= 0 disables clipping
    };

    AdamT(ParamStoreT<T>& store, Options opt) : store_(store), opt_(opt) {
        m_.resize(store.entries().size());
        v_.resize(store.entries().size());
        for (std::size_t i = 0; i < store.entries().size(); ++i) {
            m_[i].assign(store.entries()[i].tensor.size(), T(0));
            v_[i].assign(store.entries()[i].tensor.size(), T(0));
        }
    }

    /// Applies one update from the accumulated gradients, then clears them.
    /// `lr_scale` multiplies the base learning rate (cosine decay hook).
    void step(double lr_scale = 1.0) {
        ++t_;
        double clip = 1.0;
        if (opt_.clip_norm > 0) {
            double sq = 0.0;
            for (auto& p : store_.entries())
                for (T g : p.tensor.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
            const double norm = std::sqrt(sq);
            if (norm > opt_.clip_norm) clip = opt_.clip_norm / norm;
        }
        const double bias1 = 1.0 - std::pow(opt_.beta1, t_);
        const double bias2 = 1.0 - std::pow(opt_.beta2, t_);
        const double lr = opt_.lr * lr_scale;
        for (std::size_t i = 0; i < store_.entries().size(); ++i) {
            auto vals = store_.entries()[i].tensor.values_mut();
            auto grads = store_.entries()[i].tensor.grad();
            for (std::size_t k = 0; k < vals.size(); ++k) {
                const double g = static_cast<double>(grads[k]) * clip;
                m_[i][k] = static_cast<T>(opt_.beta1 * m_[i][k] + (1.0 - opt_.beta1) * g);
                v_[i][k] = static_cast<T>(opt_.beta2 * v_[i][k] + (1.0 - opt_.beta2) * g * g);
                const double mhat = m_[i][k] / bias1;
                const double vhat = v_[i][k] / bias2;
                vals[k] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
        store_.zero_grads();
    }

    long step_count() const { return t_; }

private:
    ParamStoreT<T>& store_;
    Options opt_;
    long t_ = 0;
    std::vector<std::vector<T>> m_;
    std::vector<std::vector<T>> v_;
};

using Adam = AdamT<double>;

}  // namespace s2tpv
