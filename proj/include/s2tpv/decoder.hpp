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
#include "s2tpv/tpv.hpp"

namespace s2tpv {

/// Two linear layers with a softplus between them, nothing more. Voxel and
/// point predictions share these weights.
template <class T>
struct DecoderParamsT {
    TensorT<T> w1, b1;  // C -> C_mid
    TensorT<T> w2, b2;  // C_mid -> n_classes

    std::size_t n_classes() const { return w2.shape()[1]; }
    std::size_t param_count() const {
        return w1.size() + b1.size() + w2.size() + b2.size();
    }
};

using DecoderParams = DecoderParamsT<double>;

template <class T>
DecoderParamsT<T> init_decoder(std::size_t c, std::size_t c_mid, std::size_t n_classes, Rng& rng) {
    DecoderParamsT<T> p;
    p.w1 = TensorT<T>::gaussian({c, c_mid}, rng,
                                static_cast<T>(std::sqrt(1.0 / static_cast<double>(c))), true);
    p.b1 = TensorT<T>::zeros({c_mid}, true);
    p.w2 = TensorT<T>::gaussian({c_mid, n_classes}, rng,
                                static_cast<T>(std::sqrt(1.0 / static_cast<double>(c_mid))), true);
    p.b2 = TensorT<T>::zeros({n_classes}, true);
    return p;
}

template <class T>
void register_decoder(DecoderParamsT<T>& p, ParamStoreT<T>& store, const std::string& prefix) {
    store.add(prefix + ".w1", p.w1);
    store.add(prefix + ".b1", p.b1);
    store.add(prefix + ".w2", p.w2);
    store.add(prefix + ".b2", p.b2);
}

template <class T>
TensorT<T> decoder_mlp(const TensorT<T>& features, const DecoderParamsT<T>& p) {
    return affine(softplus(affine(features, p.w1, p.b1)), p.w2, p.b2);
}

/// Per-voxel class logits: aggregate the TPV planes at every voxel center and
/// run the shared MLP.
template <class T>
TensorT<T> decode_voxels(const TpvStateT<T>& tpv, const DecoderParamsT<T>& params) {
    const GridDims g = tpv.grid();
    const std::size_t c = tpv.embed_dim();
    auto feats = reshape(aggregate_voxels(tpv), {g.h * g.w * g.d, c});
    auto logits = decoder_mlp(feats, params);
    return reshape(logits, {g.h, g.w, g.d, params.n_classes()});
}

/// Per-point class logits at arbitrary metric ego points, through the same
/// MLP as decode_voxels. `n_out`, when nonzero, keeps only the leading
/// classes (the LiDAR-segmentation head drops the trailing `empty` column).
template <class T>
TensorT<T> decode_points(const TpvStateT<T>& tpv, const std::vector<Vec3>& points,
                         const DecoderParamsT<T>& params, const EgoBounds& bounds,
                         std::size_t n_out = 0) {
    if (points.empty()) return TensorT<T>::zeros({0, n_out ? n_out : params.n_classes()});
    auto feats = aggregate_points(tpv, points, bounds);
    auto logits = decoder_mlp(feats, params);
    if (n_out && n_out != params.n_classes()) logits = slice_last(logits, 0, n_out);
    return logits;
}

}  // namespace s2tpv
