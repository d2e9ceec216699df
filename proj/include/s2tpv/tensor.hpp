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
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace s2tpv {

using Shape = std::vector<std::size_t>;

/// Shape/axis violations on tensor operations.
struct DimError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values, failed numeric checks.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Invalid configuration (bad bounds, empty camera list, ...).
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// File format / filesystem problems.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ")";
    return os.str();
}

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (auto e : s) n *= e;
    return n;
}

/// Deterministic random source. Gaussian draws use Box-Muller on raw 64-bit
/// output so sequences do not depend on the standard library's distribution
/// implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    double uniform() {
        // 53-bit mantissa in [0, 1)
        return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
    }

    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        has_spare_ = true;
        return r * std::cos(th);
    }

    /// Uniform integer in [0, n).
    std::size_t index(std::size_t n) {
        return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
    }

private:
    std::mt19937_64 engine_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {

template <class T>
struct TensorNodeT {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;      // allocated lazily, same size as value
    bool needs_grad = false;  // participates in the current tape
    std::vector<std::shared_ptr<TensorNodeT>> parents;
    std::function<void(TensorNodeT&)> backprop;  // accumulates into parent grads

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), T(0));
    }
};

}  // namespace detail

/// Dense row-major tensor with reverse-mode gradients. Value-semantics handle
/// over a shared node; the tape is the set of nodes reachable through
/// `parents` and is rebuilt by every forward pass.
template <class T>
class TensorT {
public:
    using Node = detail::TensorNodeT<T>;

    TensorT() = default;

    static TensorT zeros(Shape shape, bool requires_grad = false) {
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value.assign(shape_numel(t.node_->shape), T(0));
        t.node_->needs_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        return t;
    }

    static TensorT full(Shape shape, T v, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        std::fill(t.node_->value.begin(), t.node_->value.end(), v);
        return t;
    }

    static TensorT from_data(Shape shape, std::vector<T> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw DimError("from_data: " + shape_str(shape) + " does not hold " +
                           std::to_string(data.size()) + " elements");
        TensorT t;
        t.node_ = std::make_shared<Node>();
        t.node_->shape = std::move(shape);
        t.node_->value = std::move(data);
        t.node_->needs_grad = requires_grad;
        if (requires_grad) t.node_->ensure_grad();
        return t;
    }

    static TensorT scalar(T v, bool requires_grad = false) {
        return from_data({1}, {v}, requires_grad);
    }

    static TensorT gaussian(Shape shape, Rng& rng, T stddev, bool requires_grad = false) {
        TensorT t = zeros(std::move(shape), requires_grad);
        for (auto& v : t.node_->value) v = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    bool valid() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    std::span<T> values_mut() { return node_->value; }
    std::span<const T> grad() const { return node_->grad; }

    bool requires_grad() const { return node_ && node_->needs_grad; }

    T item() const {
        if (size() != 1) throw DimError("item: tensor has " + std::to_string(size()) + " elements");
        return node_->value[0];
    }

    T at(std::initializer_list<std::size_t> idx) const {
        return node_->value[flat_index(idx)];
    }

    void set(std::initializer_list<std::size_t> idx, T v) { node_->value[flat_index(idx)] = v; }

    bool all_finite() const {
        for (T v : node_->value)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    void zero_grad() {
        if (node_) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
    }

    /// Reverse pass from a scalar output. Gradients accumulate additively into
    /// every reachable node that needs them.
    void backward() {
        if (size() != 1) throw DimError("backward: output must be scalar");
        if (!node_->needs_grad) return;
        node_->ensure_grad();
        node_->grad[0] += T(1);
        std::vector<Node*> order;
        topo_sort(order);
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            Node* n = *it;
            if (n->backprop) n->backprop(*n);
        }
    }

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

    /// Builds an op result. Records the tape edge only when a parent is live.
    static TensorT make_op(Shape shape, std::vector<TensorT> parents,
                           std::function<void(Node&)> backprop) {
        TensorT t = zeros(std::move(shape));
        bool needs = false;
        for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            t.node_->needs_grad = true;
            t.node_->ensure_grad();
            t.node_->parents.reserve(parents.size());
            for (auto& p : parents) t.node_->parents.push_back(p.node_);
            t.node_->backprop = std::move(backprop);
        }
        return t;
    }

private:
    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != rank()) throw DimError("index rank mismatch");
        std::size_t flat = 0;
        std::size_t d = 0;
        for (std::size_t i : idx) {
            flat = flat * node_->shape[d] + i;
            ++d;
        }
        return flat;
    }

    void topo_sort(std::vector<Node*>& order) {
        std::unordered_set<Node*> seen;
        // Iterative DFS; child pushed after all parents visited.
        struct Item {
            Node* n;
            std::size_t next_parent;
        };
        std::vector<Item> stack;
        stack.push_back({node_.get(), 0});
        seen.insert(node_.get());
        while (!stack.empty()) {
            Item& top = stack.back();
            if (top.next_parent < top.n->parents.size()) {
                Node* p = top.n->parents[top.next_parent++].get();
                if (p->needs_grad && !seen.count(p)) {
                    seen.insert(p);
                    stack.push_back({p, 0});
                }
            } else {
                order.push_back(top.n);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

using Tensor = TensorT<double>;
using TensorF = TensorT<float>;

template <class T>
void assert_all_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> add(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i];
        }
    });
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
    return out;
}

template <class T>
TensorT<T> sub(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimError("sub: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] -= n.grad[i];
        }
    });
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
    return out;
}

template <class T>
TensorT<T> mul(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.shape() != b.shape())
        throw DimError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto out = TensorT<T>::make_op(a.shape(), {a, b}, [an = a.node(), bn = b.node()](auto& n) {
        if (an->needs_grad) {
            an->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * bn->value[i];
        }
        if (bn->needs_grad) {
            bn->ensure_grad();
            for (std::size_t i = 0; i < n.grad.size(); ++i) bn->grad[i] += n.grad[i] * an->value[i];
        }
    });
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
    return out;
}

template <class T>
TensorT<T> scale(const TensorT<T>& a, T s) {
    auto out = TensorT<T>::make_op(a.shape(), {a}, [an = a.node(), s](auto& n) {
        an->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) an->grad[i] += n.grad[i] * s;
    });
    auto av = a.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * s;
    return out;
}

template <class T>
TensorT<T> operator+(const TensorT<T>& a, const TensorT<T>& b) { return add(a, b); }
template <class T>
TensorT<T> operator-(const TensorT<T>& a, const TensorT<T>& b) { return sub(a, b); }
template <class T>
TensorT<T> operator*(const TensorT<T>& a, const TensorT<T>& b) { return mul(a, b); }

/// Per-row scaling: out[n, :] = x[n, :] * w[n]. Gradients reach both sides.
template <class T>
TensorT<T> colwise_mul(const TensorT<T>& x, const TensorT<T>& w) {
    if (x.rank() != 2 || w.rank() != 1 || x.shape()[0] != w.shape()[0])
        throw DimError("colwise_mul: want [N,C] and [N], got " + shape_str(x.shape()) + " and " +
                       shape_str(w.shape()));
    const std::size_t n_rows = x.shape()[0], n_cols = x.shape()[1];
    auto out = TensorT<T>::make_op(
        x.shape(), {x, w}, [xn = x.node(), wn = w.node(), n_rows, n_cols](auto& n) {
            if (xn->needs_grad) {
                xn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r) {
                    const T s = wn->value[r];
                    for (std::size_t c = 0; c < n_cols; ++c)
                        xn->grad[r * n_cols + c] += n.grad[r * n_cols + c] * s;
                }
            }
            if (wn->needs_grad) {
                wn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r) {
                    T acc = T(0);
                    for (std::size_t c = 0; c < n_cols; ++c)
                        acc += n.grad[r * n_cols + c] * xn->value[r * n_cols + c];
                    wn->grad[r] += acc;
                }
            }
        });
    auto xv = x.values();
    auto wv = w.values();
    auto ov = out.values_mut();
    for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t c = 0; c < n_cols; ++c) ov[r * n_cols + c] = xv[r * n_cols + c] * wv[r];
    return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> reshape(const TensorT<T>& x, Shape new_shape) {
    if (shape_numel(new_shape) != x.size())
        throw DimError("reshape: " + shape_str(x.shape()) + " -> " + shape_str(new_shape));
    auto out = TensorT<T>::make_op(new_shape, {x}, [xn = x.node()](auto& n) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) xn->grad[i] += n.grad[i];
    });
    auto xv = x.values();
    auto ov = out.values_mut();
    std::copy(xv.begin(), xv.end(), ov.begin());
    return out;
}

/// Slice [c0, c1) along the trailing axis.
template <class T>
TensorT<T> slice_last(const TensorT<T>& x, std::size_t c0, std::size_t c1) {
    if (x.rank() == 0) throw DimError("slice_last: rank-0 tensor");
    const std::size_t last = x.shape().back();
    if (c0 >= c1 || c1 > last) throw DimError("slice_last: bad range");
    Shape os = x.shape();
    os.back() = c1 - c0;
    const std::size_t n_rows = x.size() / last;
    const std::size_t width = c1 - c0;
    auto out =
        TensorT<T>::make_op(os, {x}, [xn = x.node(), n_rows, last, c0, width](auto& n) {
            xn->ensure_grad();
            for (std::size_t r = 0; r < n_rows; ++r)
                for (std::size_t c = 0; c < width; ++c)
                    xn->grad[r * last + c0 + c] += n.grad[r * width + c];
        });
    auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t r = 0; r < n_rows; ++r)
        for (std::size_t c = 0; c < width; ++c) ov[r * width + c] = xv[r * last + c0 + c];
    return out;
}

/// Concatenate along the trailing axis; leading extents must match.
template <class T>
TensorT<T> concat_last(const TensorT<T>& a, const TensorT<T>& b) {
    if (a.rank() != b.rank() || a.rank() == 0)
        throw DimError("concat_last: rank mismatch");
    for (std::size_t d = 0; d + 1 < a.rank(); ++d)
        if (a.shape()[d] != b.shape()[d]) throw DimError("concat_last: leading extents differ");
    const std::size_t ca = a.shape().back(), cb = b.shape().back();
    Shape os = a.shape();
    os.back() = ca + cb;
    const std::size_t n_rows = a.size() / ca;
    auto out = TensorT<T>::make_op(
        os, {a, b}, [an = a.node(), bn = b.node(), n_rows, ca, cb](auto& n) {
            const std::size_t cc = ca + cb;
            if (an->needs_grad) {
                an->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r)
                    for (std::size_t c = 0; c < ca; ++c)
                        an->grad[r * ca + c] += n.grad[r * cc + c];
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r)
                    for (std::size_t c = 0; c < cb; ++c)
                        bn->grad[r * cb + c] += n.grad[r * cc + ca + c];
            }
        });
    auto av = a.values();
    auto bv = b.values();
    auto ov = out.values_mut();
    const std::size_t cc = ca + cb;
    for (std::size_t r = 0; r < n_rows; ++r) {
        for (std::size_t c = 0; c < ca; ++c) ov[r * cc + c] = av[r * ca + c];
        for (std::size_t c = 0; c < cb; ++c) ov[r * cc + ca + c] = bv[r * cb + c];
    }
    return out;
}

/// Row subset of a [N, C] tensor: out[i, :] = x[idx[i], :].
template <class T>
TensorT<T> gather_rows(const TensorT<T>& x, const std::vector<std::size_t>& idx) {
    if (x.rank() != 2) throw DimError("gather_rows: want [N, C]");
    const std::size_t n = x.shape()[0], c = x.shape()[1];
    for (std::size_t i : idx)
        if (i >= n) throw DimError("gather_rows: index out of range");
    auto out = TensorT<T>::make_op({idx.size(), c}, {x}, [xn = x.node(), idx, c](auto& nd) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < c; ++k)
                xn->grad[idx[i] * c + k] += nd.grad[i * c + k];
    });
    auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t k = 0; k < c; ++k) ov[i * c + k] = xv[idx[i] * c + k];
    return out;
}

/// Inverse of gather_rows: scatters rows into an [n_rows, C] zero tensor.
/// Indices must be distinct.
template <class T>
TensorT<T> scatter_rows(const TensorT<T>& x, const std::vector<std::size_t>& idx,
                        std::size_t n_rows) {
    if (x.rank() != 2) throw DimError("scatter_rows: want [M, C]");
    if (x.shape()[0] != idx.size()) throw DimError("scatter_rows: index count mismatch");
    const std::size_t c = x.shape()[1];
    for (std::size_t i : idx)
        if (i >= n_rows) throw DimError("scatter_rows: index out of range");
    auto out = TensorT<T>::make_op({n_rows, c}, {x}, [xn = x.node(), idx, c](auto& nd) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t k = 0; k < c; ++k)
                xn->grad[i * c + k] += nd.grad[idx[i] * c + k];
    });
    auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t k = 0; k < c; ++k) ov[idx[i] * c + k] = xv[i * c + k];
    return out;
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> sum_all(const TensorT<T>& x) {
    auto out = TensorT<T>::make_op({1}, {x}, [xn = x.node()](auto& n) {
        xn->ensure_grad();
        const T g = n.grad[0];
        for (auto& gi : xn->grad) gi += g;
    });
    auto xv = x.values();
    T acc = T(0);
    for (T v : xv) acc += v;
    out.values_mut()[0] = acc;
    return out;
}

template <class T>
TensorT<T> mean_all(const TensorT<T>& x) {
    const T inv = T(1) / static_cast<T>(x.size());
    auto out = TensorT<T>::make_op({1}, {x}, [xn = x.node(), inv](auto& n) {
        xn->ensure_grad();
        const T g = n.grad[0] * inv;
        for (auto& gi : xn->grad) gi += g;
    });
    auto xv = x.values();
    T acc = T(0);
    for (T v : xv) acc += v;
    out.values_mut()[0] = acc * inv;
    return out;
}

// ---------------------------------------------------------------------------
// affine: y[..., j] = sum_i x[..., i] * W[i, j] + b[j]
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> affine(const TensorT<T>& x, const TensorT<T>& weight, const TensorT<T>& bias) {
    if (x.rank() < 1 || weight.rank() != 2 || bias.rank() != 1)
        throw DimError("affine: ranks " + shape_str(x.shape()) + " " + shape_str(weight.shape()) +
                       " " + shape_str(bias.shape()));
    const std::size_t in_dim = weight.shape()[0];
    const std::size_t out_dim = weight.shape()[1];
    if (x.shape().back() != in_dim)
        throw DimError("affine: trailing axis " + std::to_string(x.shape().back()) +
                       " != in_dim " + std::to_string(in_dim));
    if (bias.shape()[0] != out_dim) throw DimError("affine: bias extent != out_dim");

    const std::size_t n_rows = x.size() / in_dim;
    Shape os = x.shape();
    os.back() = out_dim;

    auto out = TensorT<T>::make_op(
        os, {x, weight, bias},
        [xn = x.node(), wn = weight.node(), bn = bias.node(), n_rows, in_dim, out_dim](auto& n) {
            if (xn->needs_grad) {
                xn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r) {
                    const T* g = n.grad.data() + r * out_dim;
                    T* gx = xn->grad.data() + r * in_dim;
                    for (std::size_t i = 0; i < in_dim; ++i) {
                        const T* wrow = wn->value.data() + i * out_dim;
                        T acc = T(0);
                        for (std::size_t j = 0; j < out_dim; ++j) acc += g[j] * wrow[j];
                        gx[i] += acc;
                    }
                }
            }
            if (wn->needs_grad) {
                wn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r) {
                    const T* g = n.grad.data() + r * out_dim;
                    const T* xv = xn->value.data() + r * in_dim;
                    for (std::size_t i = 0; i < in_dim; ++i) {
                        T* gw = wn->grad.data() + i * out_dim;
                        const T xi = xv[i];
                        for (std::size_t j = 0; j < out_dim; ++j) gw[j] += xi * g[j];
                    }
                }
            }
            if (bn->needs_grad) {
                bn->ensure_grad();
                for (std::size_t r = 0; r < n_rows; ++r) {
                    const T* g = n.grad.data() + r * out_dim;
                    for (std::size_t j = 0; j < out_dim; ++j) bn->grad[j] += g[j];
                }
            }
        });

    auto xv = x.values();
    auto wv = weight.values();
    auto bv = bias.values();
    auto ov = out.values_mut();
    for (std::size_t r = 0; r < n_rows; ++r) {
        T* orow = ov.data() + r * out_dim;
        for (std::size_t j = 0; j < out_dim; ++j) orow[j] = bv[j];
        const T* xrow = xv.data() + r * in_dim;
        for (std::size_t i = 0; i < in_dim; ++i) {
            const T xi = xrow[i];
            const T* wrow = wv.data() + i * out_dim;
            for (std::size_t j = 0; j < out_dim; ++j) orow[j] += xi * wrow[j];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// softmax along an axis, max-subtracted
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> softmax(const TensorT<T>& x, std::size_t axis) {
    if (axis >= x.rank()) throw DimError("softmax: axis out of range");
    const std::size_t extent = x.shape()[axis];
    if (extent == 0) throw DimError("softmax: empty axis");
    std::size_t inner = 1;
    for (std::size_t d = axis + 1; d < x.rank(); ++d) inner *= x.shape()[d];
    const std::size_t outer = x.size() / (extent * inner);

    auto out = TensorT<T>::make_op(
        x.shape(), {x}, [xn = x.node(), outer, extent, inner](auto& n) {
            xn->ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                for (std::size_t in = 0; in < inner; ++in) {
                    const std::size_t base = o * extent * inner + in;
                    T dot = T(0);
                    for (std::size_t k = 0; k < extent; ++k) {
                        const std::size_t idx = base + k * inner;
                        dot += n.grad[idx] * n.value[idx];
                    }
                    for (std::size_t k = 0; k < extent; ++k) {
                        const std::size_t idx = base + k * inner;
                        xn->grad[idx] += n.value[idx] * (n.grad[idx] - dot);
                    }
                }
            }
        });

    auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * extent * inner + in;
            T mx = xv[base];
            for (std::size_t k = 1; k < extent; ++k) mx = std::max(mx, xv[base + k * inner]);
            T denom = T(0);
            for (std::size_t k = 0; k < extent; ++k) {
                const T e = std::exp(xv[base + k * inner] - mx);
                ov[base + k * inner] = e;
                denom += e;
            }
            const T inv = T(1) / denom;
            for (std::size_t k = 0; k < extent; ++k) ov[base + k * inner] *= inv;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// softplus: ln(1 + e^x), overflow-safe
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> softplus(const TensorT<T>& x) {
    auto out = TensorT<T>::make_op(x.shape(), {x}, [xn = x.node()](auto& n) {
        xn->ensure_grad();
        for (std::size_t i = 0; i < n.grad.size(); ++i) {
            const T v = xn->value[i];
            // sigmoid, stable on both tails
            const T s = v >= T(0) ? T(1) / (T(1) + std::exp(-v))
                                  : std::exp(v) / (T(1) + std::exp(v));
            xn->grad[i] += n.grad[i] * s;
        }
    });
    auto xv = x.values();
    auto ov = out.values_mut();
    for (std::size_t i = 0; i < ov.size(); ++i) {
        const T v = xv[i];
        ov[i] = std::max(v, T(0)) + std::log1p(std::exp(-std::abs(v)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// grid_sample2d: bilinear sampling on a [Hp, Wp, C] plane at [N, 2] points
// given in grid-index coordinates (row, col). Out-of-bounds nodes contribute
// zero. Gradients flow to the plane and to the points.
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> grid_sample2d(const TensorT<T>& plane, const TensorT<T>& points) {
    if (plane.rank() != 3) throw DimError("grid_sample2d: plane must be [Hp, Wp, C]");
    if (points.rank() != 2 || points.shape()[1] != 2)
        throw DimError("grid_sample2d: points must be [N, 2]");
    const std::size_t hp = plane.shape()[0], wp = plane.shape()[1], ch = plane.shape()[2];
    const std::size_t n_pts = points.shape()[0];

    auto corner_weights = [](T a, T b, std::ptrdiff_t& i0, std::ptrdiff_t& j0, T& fa, T& fb) {
        const T fi = std::floor(a);
        const T fj = std::floor(b);
        i0 = static_cast<std::ptrdiff_t>(fi);
        j0 = static_cast<std::ptrdiff_t>(fj);
        fa = a - fi;
        fb = b - fj;
    };

    auto out = TensorT<T>::make_op(
        {n_pts, ch}, {plane, points},
        [pn = plane.node(), qn = points.node(), hp, wp, ch, n_pts, corner_weights](auto& n) {
            const bool gp = pn->needs_grad;
            const bool gq = qn->needs_grad;
            if (gp) pn->ensure_grad();
            if (gq) qn->ensure_grad();
            for (std::size_t k = 0; k < n_pts; ++k) {
                const T a = qn->value[k * 2 + 0];
                const T b = qn->value[k * 2 + 1];
                std::ptrdiff_t i0, j0;
                T fa, fb;
                corner_weights(a, b, i0, j0, fa, fb);
                const T* g = n.grad.data() + k * ch;
                T ga = T(0), gb = T(0);
                const std::ptrdiff_t is[2] = {i0, i0 + 1};
                const std::ptrdiff_t js[2] = {j0, j0 + 1};
                const T was[2] = {T(1) - fa, fa};
                const T wbs[2] = {T(1) - fb, fb};
                const T das[2] = {T(-1), T(1)};
                const T dbs[2] = {T(-1), T(1)};
                for (int ci = 0; ci < 2; ++ci) {
                    for (int cj = 0; cj < 2; ++cj) {
                        const std::ptrdiff_t ii = is[ci], jj = js[cj];
                        if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(hp) ||
                            jj >= static_cast<std::ptrdiff_t>(wp))
                            continue;
                        const T w = was[ci] * wbs[cj];
                        const std::size_t off =
                            (static_cast<std::size_t>(ii) * wp + static_cast<std::size_t>(jj)) * ch;
                        if (gp && w != T(0)) {
                            for (std::size_t c = 0; c < ch; ++c) pn->grad[off + c] += w * g[c];
                        }
                        if (gq) {
                            const T dwa = das[ci] * wbs[cj];
                            const T dwb = was[ci] * dbs[cj];
                            T dot = T(0);
                            for (std::size_t c = 0; c < ch; ++c) dot += g[c] * pn->value[off + c];
                            ga += dwa * dot;
                            gb += dwb * dot;
                        }
                    }
                }
                if (gq) {
                    qn->grad[k * 2 + 0] += ga;
                    qn->grad[k * 2 + 1] += gb;
                }
            }
        });

    auto pv = plane.values();
    auto qv = points.values();
    auto ov = out.values_mut();
    for (std::size_t k = 0; k < n_pts; ++k) {
        const T a = qv[k * 2 + 0];
        const T b = qv[k * 2 + 1];
        std::ptrdiff_t i0, j0;
        T fa, fb;
        corner_weights(a, b, i0, j0, fa, fb);
        T* orow = ov.data() + k * ch;
        const std::ptrdiff_t is[2] = {i0, i0 + 1};
        const std::ptrdiff_t js[2] = {j0, j0 + 1};
        const T was[2] = {T(1) - fa, fa};
        const T wbs[2] = {T(1) - fb, fb};
        for (int ci = 0; ci < 2; ++ci) {
            for (int cj = 0; cj < 2; ++cj) {
                const std::ptrdiff_t ii = is[ci], jj = js[cj];
                if (ii < 0 || jj < 0 || ii >= static_cast<std::ptrdiff_t>(hp) ||
                    jj >= static_cast<std::ptrdiff_t>(wp))
                    continue;
                const T w = was[ci] * wbs[cj];
                if (w == T(0)) continue;  // keeps on-node reads exact
                const T* prow =
                    pv.data() + (static_cast<std::size_t>(ii) * wp + static_cast<std::size_t>(jj)) * ch;
                for (std::size_t c = 0; c < ch; ++c) orow[c] += w * prow[c];
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// layer_norm over the trailing axis with learnable gain/shift
// ---------------------------------------------------------------------------

template <class T>
TensorT<T> layer_norm(const TensorT<T>& x, const TensorT<T>& gain, const TensorT<T>& shift,
                      T eps = T(1e-5)) {
    if (x.rank() < 1 || gain.rank() != 1 || shift.rank() != 1)
        throw DimError("layer_norm: bad ranks");
    const std::size_t ch = x.shape().back();
    if (gain.shape()[0] != ch || shift.shape()[0] != ch)
        throw DimError("layer_norm: gain/shift extent mismatch");
    const std::size_t n_rows = x.size() / ch;

    // Per-row mean and inverse stddev are recomputed in backward from values.
    auto out = TensorT<T>::make_op(
        x.shape(), {x, gain, shift},
        [xn = x.node(), gn = gain.node(), sn = shift.node(), n_rows, ch, eps](auto& n) {
            const bool gx = xn->needs_grad, gg = gn->needs_grad, gs = sn->needs_grad;
            if (gx) xn->ensure_grad();
            if (gg) gn->ensure_grad();
            if (gs) sn->ensure_grad();
            std::vector<T> xhat(ch);
            for (std::size_t r = 0; r < n_rows; ++r) {
                const T* xr = xn->value.data() + r * ch;
                const T* gr = n.grad.data() + r * ch;
                T mean = T(0);
                for (std::size_t c = 0; c < ch; ++c) mean += xr[c];
                mean /= static_cast<T>(ch);
                T var = T(0);
                for (std::size_t c = 0; c < ch; ++c) var += (xr[c] - mean) * (xr[c] - mean);
                var /= static_cast<T>(ch);
                const T inv_std = T(1) / std::sqrt(var + eps);
                for (std::size_t c = 0; c < ch; ++c) xhat[c] = (xr[c] - mean) * inv_std;
                if (gg || gs) {
                    for (std::size_t c = 0; c < ch; ++c) {
                        if (gg) gn->grad[c] += gr[c] * xhat[c];
                        if (gs) sn->grad[c] += gr[c];
                    }
                }
                if (gx) {
                    // dL/dxhat = g * gain; standard layer-norm backward
                    T sum_gh = T(0), sum_ghx = T(0);
                    for (std::size_t c = 0; c < ch; ++c) {
                        const T gh = gr[c] * gn->value[c];
                        sum_gh += gh;
                        sum_ghx += gh * xhat[c];
                    }
                    T* xg = xn->grad.data() + r * ch;
                    const T inv_ch = T(1) / static_cast<T>(ch);
                    for (std::size_t c = 0; c < ch; ++c) {
                        const T gh = gr[c] * gn->value[c];
                        xg[c] += inv_std * (gh - inv_ch * sum_gh - xhat[c] * inv_ch * sum_ghx);
                    }
                }
            }
        });

    auto xv = x.values();
    auto gv = gain.values();
    auto sv = shift.values();
    auto ov = out.values_mut();
    for (std::size_t r = 0; r < n_rows; ++r) {
        const T* xr = xv.data() + r * ch;
        T* orow = ov.data() + r * ch;
        T mean = T(0);
        for (std::size_t c = 0; c < ch; ++c) mean += xr[c];
        mean /= static_cast<T>(ch);
        T var = T(0);
        for (std::size_t c = 0; c < ch; ++c) var += (xr[c] - mean) * (xr[c] - mean);
        var /= static_cast<T>(ch);
        const T inv_std = T(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < ch; ++c) orow[c] = (xr[c] - mean) * inv_std * gv[c] + sv[c];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Named parameters
// ---------------------------------------------------------------------------

template <class T>
struct ParamT {
    std::string name;
    TensorT<T> tensor;
};

/// Ordered registry of learnable tensors. Names must be unique; order is
/// insertion order and fixes checkpoint and optimizer layouts.
template <class T>
class ParamStoreT {
public:
    TensorT<T> add(const std::string& name, TensorT<T> t) {
        for (const auto& p : params_)
            if (p.name == name) throw ConfigError("duplicate parameter name: " + name);
        params_.push_back({name, t});
        return t;
    }

    const std::vector<ParamT<T>>& entries() const { return params_; }
    std::vector<ParamT<T>>& entries() { return params_; }

    std::size_t total_size() const {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.tensor.size();
        return n;
    }

    void zero_grads() {
        for (auto& p : params_) p.tensor.zero_grad();
    }

    const TensorT<T>& find(const std::string& name) const {
        for (const auto& p : params_)
            if (p.name == name) return p.tensor;
        throw ConfigError("no such parameter: " + name);
    }

private:
    std::vector<ParamT<T>> params_;
};

using ParamStore = ParamStoreT<double>;

// ---------------------------------------------------------------------------
// Gradient checking: central finite differences against the tape
// ---------------------------------------------------------------------------

/// Worst relative error between tape gradients and central finite differences
/// over every element of every listed parameter. `f` must rebuild its tape on
/// each call and return a scalar.
template <class T, class F>
double grad_check(F&& f, std::vector<TensorT<T>> params, double eps) {
    if (eps <= 0) throw ConfigError("grad_check: eps must be positive");
    for (auto& p : params) p.zero_grad();
    TensorT<T> out = f();
    if (!out.all_finite()) throw NumericError("grad_check: non-finite objective");
    out.backward();

    std::vector<std::vector<T>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.emplace_back(p.grad().begin(), p.grad().end());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].values_mut();
        for (std::size_t i = 0; i < vals.size(); ++i) {
            const T keep = vals[i];
            vals[i] = keep + static_cast<T>(eps);
            const double fp = static_cast<double>(f().item());
            vals[i] = keep - static_cast<T>(eps);
            const double fm = static_cast<double>(f().item());
            vals[i] = keep;
            if (!std::isfinite(fp) || !std::isfinite(fm))
                throw NumericError("grad_check: non-finite objective during probing");
            const double fd = (fp - fm) / (2.0 * eps);
            const double an = static_cast<double>(analytic[pi][i]);
            const double rel = std::abs(an - fd) / std::max({1.0, std::abs(an), std::abs(fd)});
            worst = std::max(worst, rel);
        }
    }
    return worst;
}

template <class T, class F>
double grad_check(F&& f, std::initializer_list<TensorT<T>> params, double eps) {
    return grad_check(std::forward<F>(f), std::vector<TensorT<T>>(params), eps);
}

}  // namespace s2tpv
