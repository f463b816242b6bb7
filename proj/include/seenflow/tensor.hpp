// Copyright (c) 2026 the seenflow authors
// SPDX-License-Identifier: Apache-2.0
//
// Minimal dense-tensor substrate with reverse-mode automatic differentiation.
// Values are flat Eigen arrays in C-order; matmul maps them as row-major
// matrices so Eigen's GEMM does the heavy lifting. Ops are free functions
// building a dynamically allocated graph of shared nodes; backward() runs a
// topological sweep. No broadcasting beyond the explicit *_rowwise ops.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <unordered_set>

#include "seenflow/common.hpp"

namespace seenflow {

template <typename S>
using ArrayX = Eigen::Array<S, Eigen::Dynamic, 1>;

template <typename S>
using MatMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename S>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

using Shape = std::vector<int>;

inline std::int64_t shape_size(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
    return out + "]";
}

namespace detail {

template <typename S>
struct TensorNode {
    ArrayX<S> value;
    ArrayX<S> grad;  // allocated on first accumulation
    Shape shape;
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;

    void accumulate(const ArrayX<S>& g) {
        if (!requires_grad) return;
        if (!has_grad) {
            grad = g;
            has_grad = true;
        } else {
            grad += g;
        }
    }
};

#ifndef NDEBUG
template <typename S>
inline void check_finite(const ArrayX<S>& a, const char* op) {
    if (!a.isFinite().all())
        throw std::runtime_error(std::string("non-finite value produced by op ") + op);
}
#else
template <typename S>
inline void check_finite(const ArrayX<S>&, const char*) {}
#endif

}  // namespace detail

template <typename S>
class Tensor {
public:
    using Node = detail::TensorNode<S>;

    Tensor() = default;

    static Tensor from_array(Shape shape, ArrayX<S> data, bool requires_grad = false) {
        if (shape_size(shape) != data.size())
            throw std::invalid_argument("tensor: data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
        Tensor t;
        t.n_ = std::make_shared<Node>();
        t.n_->value = std::move(data);
        t.n_->shape = std::move(shape);
        t.n_->requires_grad = requires_grad;
        return t;
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return from_array(shape, ArrayX<S>::Zero(shape_size(shape)), requires_grad);
    }

    static Tensor full(Shape shape, S v, bool requires_grad = false) {
        return from_array(shape, ArrayX<S>::Constant(shape_size(shape), v), requires_grad);
    }

    static Tensor scalar_tensor(S v, bool requires_grad = false) {
        return full({1}, v, requires_grad);
    }

    bool defined() const { return n_ != nullptr; }
    void set_requires_grad(bool v) { n_->requires_grad = v; }
    const Shape& shape() const { return n_->shape; }
    std::int64_t size() const { return n_->value.size(); }
    const ArrayX<S>& value() const { return n_->value; }
    ArrayX<S>& mutable_value() { return n_->value; }
    bool requires_grad() const { return n_->requires_grad; }

    const ArrayX<S>& grad() const {
        if (!n_->has_grad) {
            n_->grad = ArrayX<S>::Zero(n_->value.size());
            n_->has_grad = true;
        }
        return n_->grad;
    }
    void clear_grad() {
        n_->has_grad = false;
        n_->grad.resize(0);
    }
    S scalar() const {
        if (size() != 1) throw std::invalid_argument("scalar() on tensor of size != 1");
        return n_->value[0];
    }

    std::shared_ptr<Node> node() const { return n_; }
    static Tensor wrap(std::shared_ptr<Node> n) {
        Tensor t;
        t.n_ = std::move(n);
        return t;
    }

private:
    std::shared_ptr<Node> n_;
};

namespace detail {

template <typename S>
std::shared_ptr<TensorNode<S>> make_node(Shape shape, ArrayX<S> value,
                                         std::vector<std::shared_ptr<TensorNode<S>>> parents,
                                         std::function<void(TensorNode<S>&)> backprop) {
    auto n = std::make_shared<TensorNode<S>>();
    n->value = std::move(value);
    n->shape = std::move(shape);
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backprop = std::move(backprop);
    return n;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and shape ops.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape() == b.shape(),
                    "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto an = a.node(), bn = b.node();
    auto n = detail::make_node<S>(a.shape(), an->value + bn->value, {an, bn},
                                  [an, bn](detail::TensorNode<S>& out) {
                                      an->accumulate(out.grad);
                                      bn->accumulate(out.grad);
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape() == b.shape(),
                    "sub: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto an = a.node(), bn = b.node();
    auto n = detail::make_node<S>(a.shape(), an->value - bn->value, {an, bn},
                                  [an, bn](detail::TensorNode<S>& out) {
                                      an->accumulate(out.grad);
                                      bn->accumulate((-out.grad).eval());
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape() == b.shape(),
                    "mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    auto an = a.node(), bn = b.node();
    auto n = detail::make_node<S>(a.shape(), an->value * bn->value, {an, bn},
                                  [an, bn](detail::TensorNode<S>& out) {
                                      an->accumulate((out.grad * bn->value).eval());
                                      bn->accumulate((out.grad * an->value).eval());
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> scale(const Tensor<S>& a, S c) {
    auto an = a.node();
    auto n = detail::make_node<S>(a.shape(), (an->value * c).eval(), {an},
                                  [an, c](detail::TensorNode<S>& out) {
                                      an->accumulate((out.grad * c).eval());
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& a, S c) {
    auto an = a.node();
    auto n = detail::make_node<S>(a.shape(), (an->value + c).eval(), {an},
                                  [an](detail::TensorNode<S>& out) { an->accumulate(out.grad); });
    return Tensor<S>::wrap(n);
}

// Multiply by a constant array (not part of the graph); used for loss masks.
template <typename S>
Tensor<S> mul_const(const Tensor<S>& a, const ArrayX<S>& mask) {
    detail::require(a.size() == mask.size(), "mul_const: mask size mismatch");
    auto an = a.node();
    auto n = detail::make_node<S>(a.shape(), (an->value * mask).eval(), {an},
                                  [an, mask](detail::TensorNode<S>& out) {
                                      an->accumulate((out.grad * mask).eval());
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> silu(const Tensor<S>& a) {
    auto an = a.node();
    ArrayX<S> sig = (S(1) / (S(1) + (-an->value).exp())).eval();
    ArrayX<S> y = an->value * sig;
    detail::check_finite(y, "silu");
    auto n = detail::make_node<S>(
        a.shape(), std::move(y), {an}, [an, sig](detail::TensorNode<S>& out) {
            ArrayX<S> d = sig + an->value * sig * (S(1) - sig);
            an->accumulate((out.grad * d).eval());
        });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> tanh_t(const Tensor<S>& a) {
    auto an = a.node();
    ArrayX<S> y = an->value.tanh();
    auto n = detail::make_node<S>(a.shape(), y, {an}, [an, y](detail::TensorNode<S>& out) {
        an->accumulate((out.grad * (S(1) - y * y)).eval());
    });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> exp_t(const Tensor<S>& a) {
    auto an = a.node();
    ArrayX<S> y = an->value.exp();
    detail::check_finite(y, "exp");
    auto n = detail::make_node<S>(a.shape(), y, {an}, [an, y](detail::TensorNode<S>& out) {
        an->accumulate((out.grad * y).eval());
    });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> abs_t(const Tensor<S>& a) {
    auto an = a.node();
    auto n = detail::make_node<S>(a.shape(), an->value.abs(), {an},
                                  [an](detail::TensorNode<S>& out) {
                                      ArrayX<S> sign = an->value.sign();
                                      an->accumulate((out.grad * sign).eval());
                                  });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& a, Shape shape) {
    detail::require(shape_size(shape) == a.size(), "reshape: size mismatch to " + shape_str(shape));
    auto an = a.node();
    auto n = detail::make_node<S>(std::move(shape), an->value, {an},
                                  [an](detail::TensorNode<S>& out) { an->accumulate(out.grad); });
    return Tensor<S>::wrap(n);
}

// ---------------------------------------------------------------------------
// Matrix products (2-D views, row-major).
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape().size() == 2 && b.shape().size() == 2 &&
                        a.shape()[1] == b.shape()[0],
                    "matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()));
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[1];
    auto an = a.node(), bn = b.node();
    ArrayX<S> out(static_cast<std::int64_t>(m) * nn);
    MatMap<S>(out.data(), m, nn).noalias() =
        ConstMatMap<S>(an->value.data(), m, k) * ConstMatMap<S>(bn->value.data(), k, nn);
    auto n = detail::make_node<S>(
        {m, nn}, std::move(out), {an, bn}, [an, bn, m, k, nn](detail::TensorNode<S>& o) {
            ConstMatMap<S> g(o.grad.data(), m, nn);
            if (an->requires_grad) {
                ArrayX<S> ga(static_cast<std::int64_t>(m) * k);
                MatMap<S>(ga.data(), m, k).noalias() =
                    g * ConstMatMap<S>(bn->value.data(), k, nn).transpose();
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                ArrayX<S> gb(static_cast<std::int64_t>(k) * nn);
                MatMap<S>(gb.data(), k, nn).noalias() =
                    ConstMatMap<S>(an->value.data(), m, k).transpose() * g;
                bn->accumulate(gb);
            }
        });
    return Tensor<S>::wrap(n);
}

// a [M,K] x b[N,K]^T -> [M,N]
template <typename S>
Tensor<S> matmul_nt(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape().size() == 2 && b.shape().size() == 2 &&
                        a.shape()[1] == b.shape()[1],
                    "matmul_nt: incompatible shapes " + shape_str(a.shape()) + " x " +
                        shape_str(b.shape()) + "^T");
    const int m = a.shape()[0], k = a.shape()[1], nn = b.shape()[0];
    auto an = a.node(), bn = b.node();
    ArrayX<S> out(static_cast<std::int64_t>(m) * nn);
    MatMap<S>(out.data(), m, nn).noalias() =
        ConstMatMap<S>(an->value.data(), m, k) *
        ConstMatMap<S>(bn->value.data(), nn, k).transpose();
    auto n = detail::make_node<S>(
        {m, nn}, std::move(out), {an, bn}, [an, bn, m, k, nn](detail::TensorNode<S>& o) {
            ConstMatMap<S> g(o.grad.data(), m, nn);
            if (an->requires_grad) {
                ArrayX<S> ga(static_cast<std::int64_t>(m) * k);
                MatMap<S>(ga.data(), m, k).noalias() = g * ConstMatMap<S>(bn->value.data(), nn, k);
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                ArrayX<S> gb(static_cast<std::int64_t>(nn) * k);
                MatMap<S>(gb.data(), nn, k).noalias() =
                    g.transpose() * ConstMatMap<S>(an->value.data(), m, k);
                bn->accumulate(gb);
            }
        });
    return Tensor<S>::wrap(n);
}

// ---------------------------------------------------------------------------
// Trailing-axis (rowwise) broadcasts: a is [R,C], b is [C].
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape().size() == 2 && b.size() == a.shape()[1],
                    "add_rowwise: want [R,C] + [C], got " + shape_str(a.shape()) + " + " +
                        shape_str(b.shape()));
    const int r = a.shape()[0], c = a.shape()[1];
    auto an = a.node(), bn = b.node();
    ArrayX<S> out(an->value.size());
    MatMap<S>(out.data(), r, c) = ConstMatMap<S>(an->value.data(), r, c);
    MatMap<S>(out.data(), r, c).rowwise() +=
        Eigen::Map<const Eigen::RowVectorX<S>>(bn->value.data(), c);
    auto n = detail::make_node<S>(
        a.shape(), std::move(out), {an, bn}, [an, bn, r, c](detail::TensorNode<S>& o) {
            an->accumulate(o.grad);
            if (bn->requires_grad) {
                ArrayX<S> gb(c);
                Eigen::Map<Eigen::RowVectorX<S>>(gb.data(), c) =
                    ConstMatMap<S>(o.grad.data(), r, c).colwise().sum();
                bn->accumulate(gb);
            }
        });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> mul_rowwise(const Tensor<S>& a, const Tensor<S>& b) {
    detail::require(a.shape().size() == 2 && b.size() == a.shape()[1],
                    "mul_rowwise: want [R,C] * [C], got " + shape_str(a.shape()) + " * " +
                        shape_str(b.shape()));
    const int r = a.shape()[0], c = a.shape()[1];
    auto an = a.node(), bn = b.node();
    ArrayX<S> out(an->value.size());
    MatMap<S>(out.data(), r, c) =
        ConstMatMap<S>(an->value.data(), r, c).array().rowwise() *
        Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(bn->value.data(), c);
    auto n = detail::make_node<S>(
        a.shape(), std::move(out), {an, bn}, [an, bn, r, c](detail::TensorNode<S>& o) {
            if (an->requires_grad) {
                ArrayX<S> ga(o.grad.size());
                MatMap<S>(ga.data(), r, c) =
                    ConstMatMap<S>(o.grad.data(), r, c).array().rowwise() *
                    Eigen::Map<const Eigen::Array<S, 1, Eigen::Dynamic>>(bn->value.data(), c);
                an->accumulate(ga);
            }
            if (bn->requires_grad) {
                ArrayX<S> gb(c);
                Eigen::Map<Eigen::RowVectorX<S>>(gb.data(), c) =
                    (ConstMatMap<S>(o.grad.data(), r, c).array() *
                     ConstMatMap<S>(an->value.data(), r, c).array())
                        .colwise()
                        .sum()
                        .matrix();
                bn->accumulate(gb);
            }
        });
    return Tensor<S>::wrap(n);
}

// ---------------------------------------------------------------------------
// Axis reductions and line ops. A tensor of shape s is viewed as
// [outer, s[axis], inner] with inner the product of trailing dims.
// ---------------------------------------------------------------------------
namespace detail {
inline void axis_split(const Shape& s, int axis, std::int64_t* outer, std::int64_t* n,
                       std::int64_t* inner) {
    require(axis >= 0 && axis < static_cast<int>(s.size()),
            "axis " + std::to_string(axis) + " out of range for " + shape_str(s));
    *outer = 1;
    for (int i = 0; i < axis; ++i) *outer *= s[i];
    *n = s[axis];
    *inner = 1;
    for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) *inner *= s[i];
}
}  // namespace detail

template <typename S>
Tensor<S> sum_axis(const Tensor<S>& a, int axis) {
    std::int64_t outer, n, inner;
    detail::axis_split(a.shape(), axis, &outer, &n, &inner);
    Shape out_shape = a.shape();
    out_shape.erase(out_shape.begin() + axis);
    if (out_shape.empty()) out_shape = {1};
    auto an = a.node();
    ArrayX<S> out = ArrayX<S>::Zero(outer * inner);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < n; ++i)
            out.segment(o * inner, inner) += an->value.segment((o * n + i) * inner, inner);
    auto node = detail::make_node<S>(
        out_shape, std::move(out), {an}, [an, outer, n, inner](detail::TensorNode<S>& o) {
            ArrayX<S> g(outer * n * inner);
            for (std::int64_t ou = 0; ou < outer; ++ou)
                for (std::int64_t i = 0; i < n; ++i)
                    g.segment((ou * n + i) * inner, inner) = o.grad.segment(ou * inner, inner);
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

template <typename S>
Tensor<S> mean_axis(const Tensor<S>& a, int axis) {
    return scale(sum_axis(a, axis), S(1) / S(a.shape()[axis]));
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& a) {
    auto an = a.node();
    ArrayX<S> out(1);
    out[0] = an->value.sum();
    auto n = detail::make_node<S>({1}, std::move(out), {an}, [an](detail::TensorNode<S>& o) {
        an->accumulate(ArrayX<S>::Constant(an->value.size(), o.grad[0]));
    });
    return Tensor<S>::wrap(n);
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& a) {
    return scale(sum_all(a), S(1) / S(a.size()));
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& a, int axis) {
    std::int64_t outer, n, inner;
    detail::axis_split(a.shape(), axis, &outer, &n, &inner);
    auto an = a.node();
    ArrayX<S> y(an->value.size());
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            S mx = an->value[base];
            for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, an->value[base + j * inner]);
            S denom = S(0);
            for (std::int64_t j = 0; j < n; ++j) {
                S e = std::exp(an->value[base + j * inner] - mx);
                y[base + j * inner] = e;
                denom += e;
            }
            for (std::int64_t j = 0; j < n; ++j) y[base + j * inner] /= denom;
        }
    auto node = detail::make_node<S>(
        a.shape(), y, {an}, [an, y, outer, n, inner](detail::TensorNode<S>& o) {
            ArrayX<S> g(y.size());
            for (std::int64_t ou = 0; ou < outer; ++ou)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = ou * n * inner + i;
                    S dot = S(0);
                    for (std::int64_t j = 0; j < n; ++j)
                        dot += o.grad[base + j * inner] * y[base + j * inner];
                    for (std::int64_t j = 0; j < n; ++j)
                        g[base + j * inner] =
                            (o.grad[base + j * inner] - dot) * y[base + j * inner];
                }
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

template <typename S>
Tensor<S> layer_normalize(const Tensor<S>& a, int axis, S eps) {
    std::int64_t outer, n, inner;
    detail::axis_split(a.shape(), axis, &outer, &n, &inner);
    auto an = a.node();
    ArrayX<S> y(an->value.size());
    ArrayX<S> inv_std(outer * inner);
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t i = 0; i < inner; ++i) {
            const std::int64_t base = o * n * inner + i;
            S mean = S(0);
            for (std::int64_t j = 0; j < n; ++j) mean += an->value[base + j * inner];
            mean /= S(n);
            S var = S(0);
            for (std::int64_t j = 0; j < n; ++j) {
                S d = an->value[base + j * inner] - mean;
                var += d * d;
            }
            var /= S(n);
            S is = S(1) / std::sqrt(var + eps);
            inv_std[o * inner + i] = is;
            for (std::int64_t j = 0; j < n; ++j)
                y[base + j * inner] = (an->value[base + j * inner] - mean) * is;
        }
    auto node = detail::make_node<S>(
        a.shape(), y, {an}, [an, y, inv_std, outer, n, inner](detail::TensorNode<S>& o) {
            ArrayX<S> g(y.size());
            for (std::int64_t ou = 0; ou < outer; ++ou)
                for (std::int64_t i = 0; i < inner; ++i) {
                    const std::int64_t base = ou * n * inner + i;
                    S gmean = S(0), gydot = S(0);
                    for (std::int64_t j = 0; j < n; ++j) {
                        gmean += o.grad[base + j * inner];
                        gydot += o.grad[base + j * inner] * y[base + j * inner];
                    }
                    gmean /= S(n);
                    gydot /= S(n);
                    const S is = inv_std[ou * inner + i];
                    for (std::int64_t j = 0; j < n; ++j)
                        g[base + j * inner] = is * (o.grad[base + j * inner] - gmean -
                                                    y[base + j * inner] * gydot);
                }
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// Gather / scatter by row index. Rows are the leading axis; index -1 yields a
// zero row and receives no gradient.
// ---------------------------------------------------------------------------
template <typename S>
Tensor<S> gather_rows(const Tensor<S>& a, std::shared_ptr<const std::vector<std::int64_t>> idx) {
    detail::require(a.shape().size() >= 1, "gather_rows: rank >= 1 required");
    const std::int64_t rows = a.shape()[0];
    const std::int64_t inner = a.size() / std::max<std::int64_t>(rows, 1);
    auto an = a.node();
    const std::int64_t m = static_cast<std::int64_t>(idx->size());
    ArrayX<S> out(m * inner);
    const S* src = an->value.data();
    S* dst = out.data();
    for (std::int64_t r = 0; r < m; ++r) {
        std::int64_t s = (*idx)[r];
        if (s < 0) {
            std::fill(dst + r * inner, dst + (r + 1) * inner, S(0));
        } else {
            detail::require(s < rows, "gather_rows: index out of range");
            std::copy(src + s * inner, src + (s + 1) * inner, dst + r * inner);
        }
    }
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<int>(m);
    auto node = detail::make_node<S>(
        out_shape, std::move(out), {an}, [an, idx, inner, rows](detail::TensorNode<S>& o) {
            ArrayX<S> g = ArrayX<S>::Zero(rows * inner);
            const std::int64_t m2 = static_cast<std::int64_t>(idx->size());
            for (std::int64_t r = 0; r < m2; ++r) {
                std::int64_t s = (*idx)[r];
                if (s < 0) continue;
                g.segment(s * inner, inner) += o.grad.segment(r * inner, inner);
            }
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

template <typename S>
Tensor<S> scatter_add_rows(const Tensor<S>& a,
                           std::shared_ptr<const std::vector<std::int64_t>> idx,
                           std::int64_t out_rows) {
    detail::require(a.shape().size() >= 1 &&
                        a.shape()[0] == static_cast<int>(idx->size()),
                    "scatter_add_rows: leading dim must match index count");
    const std::int64_t m = a.shape()[0];
    const std::int64_t inner = a.size() / std::max<std::int64_t>(m, 1);
    auto an = a.node();
    ArrayX<S> out = ArrayX<S>::Zero(out_rows * inner);
    for (std::int64_t r = 0; r < m; ++r) {
        std::int64_t d = (*idx)[r];
        if (d < 0) continue;
        detail::require(d < out_rows, "scatter_add_rows: index out of range");
        out.segment(d * inner, inner) += an->value.segment(r * inner, inner);
    }
    Shape out_shape = a.shape();
    out_shape[0] = static_cast<int>(out_rows);
    auto node = detail::make_node<S>(
        out_shape, std::move(out), {an}, [an, idx, inner](detail::TensorNode<S>& o) {
            const std::int64_t m2 = static_cast<std::int64_t>(idx->size());
            ArrayX<S> g(m2 * inner);
            for (std::int64_t r = 0; r < m2; ++r) {
                std::int64_t d = (*idx)[r];
                if (d < 0)
                    g.segment(r * inner, inner).setZero();
                else
                    g.segment(r * inner, inner) = o.grad.segment(d * inner, inner);
            }
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

// Columns [start, start+count) of a 2-D tensor.
template <typename S>
Tensor<S> slice_cols(const Tensor<S>& a, int start, int count) {
    detail::require(a.shape().size() == 2, "slice_cols: rank-2 tensor required");
    const int r = a.shape()[0], c = a.shape()[1];
    detail::require(start >= 0 && count > 0 && start + count <= c, "slice_cols: range out of bounds");
    auto an = a.node();
    ArrayX<S> out(static_cast<std::int64_t>(r) * count);
    for (int i = 0; i < r; ++i)
        out.segment(static_cast<std::int64_t>(i) * count, count) =
            an->value.segment(static_cast<std::int64_t>(i) * c + start, count);
    auto node = detail::make_node<S>(
        {r, count}, std::move(out), {an}, [an, r, c, start, count](detail::TensorNode<S>& o) {
            ArrayX<S> g = ArrayX<S>::Zero(static_cast<std::int64_t>(r) * c);
            for (int i = 0; i < r; ++i)
                g.segment(static_cast<std::int64_t>(i) * c + start, count) =
                    o.grad.segment(static_cast<std::int64_t>(i) * count, count);
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

// Concatenate along an axis; all other dims must agree.
template <typename S>
Tensor<S> concatenate(const std::vector<Tensor<S>>& ts, int axis) {
    detail::require(!ts.empty(), "concatenate: empty input list");
    const Shape& first = ts[0].shape();
    detail::require(axis >= 0 && axis < static_cast<int>(first.size()),
                    "concatenate: axis out of range");
    Shape out_shape = first;
    std::int64_t total_axis = 0;
    for (const Tensor<S>& t : ts) {
        detail::require(t.shape().size() == first.size(), "concatenate: rank mismatch");
        for (int i = 0; i < static_cast<int>(first.size()); ++i)
            if (i != axis)
                detail::require(t.shape()[i] == first[i],
                                "concatenate: shape mismatch " + shape_str(t.shape()));
        total_axis += t.shape()[axis];
    }
    out_shape[axis] = static_cast<int>(total_axis);

    std::int64_t outer = 1, inner = 1;
    for (int i = 0; i < axis; ++i) outer *= first[i];
    for (int i = axis + 1; i < static_cast<int>(first.size()); ++i) inner *= first[i];

    ArrayX<S> out(shape_size(out_shape));
    std::vector<std::shared_ptr<detail::TensorNode<S>>> parents;
    std::vector<std::int64_t> axis_sizes;
    for (const Tensor<S>& t : ts) {
        parents.push_back(t.node());
        axis_sizes.push_back(t.shape()[axis]);
    }
    const std::int64_t out_stride = total_axis * inner;
    std::int64_t offset = 0;
    for (std::size_t p = 0; p < parents.size(); ++p) {
        const std::int64_t in_stride = axis_sizes[p] * inner;
        for (std::int64_t o = 0; o < outer; ++o)
            out.segment(o * out_stride + offset, in_stride) =
                parents[p]->value.segment(o * in_stride, in_stride);
        offset += in_stride;
    }
    auto node = detail::make_node<S>(
        out_shape, std::move(out), parents,
        [parents, axis_sizes, outer, inner, total_axis](detail::TensorNode<S>& o) {
            const std::int64_t out_stride = total_axis * inner;
            std::int64_t offset = 0;
            for (std::size_t p = 0; p < parents.size(); ++p) {
                const std::int64_t in_stride = axis_sizes[p] * inner;
                if (parents[p]->requires_grad) {
                    ArrayX<S> g(outer * in_stride);
                    for (std::int64_t ou = 0; ou < outer; ++ou)
                        g.segment(ou * in_stride, in_stride) =
                            o.grad.segment(ou * out_stride + offset, in_stride);
                    parents[p]->accumulate(g);
                }
                offset += in_stride;
            }
        });
    return Tensor<S>::wrap(node);
}

// Rotary rotation of the leading 2*P columns as (even, odd) pairs; cos/sin are
// per-row tables of P entries each (constants, not differentiated).
template <typename S>
Tensor<S> rope_rotate(const Tensor<S>& a, std::shared_ptr<const ArrayX<S>> cos_tab,
                      std::shared_ptr<const ArrayX<S>> sin_tab, int pairs) {
    detail::require(a.shape().size() == 2, "rope_rotate: rank-2 tensor required");
    const int r = a.shape()[0], c = a.shape()[1];
    detail::require(2 * pairs <= c, "rope_rotate: more pairs than columns");
    detail::require(cos_tab->size() == static_cast<std::int64_t>(r) * pairs &&
                        sin_tab->size() == cos_tab->size(),
                    "rope_rotate: table size mismatch");
    auto an = a.node();
    ArrayX<S> out = an->value;
    for (int i = 0; i < r; ++i)
        for (int p = 0; p < pairs; ++p) {
            const std::int64_t b = static_cast<std::int64_t>(i) * c + 2 * p;
            const S co = (*cos_tab)[static_cast<std::int64_t>(i) * pairs + p];
            const S si = (*sin_tab)[static_cast<std::int64_t>(i) * pairs + p];
            const S x0 = an->value[b], x1 = an->value[b + 1];
            out[b] = x0 * co - x1 * si;
            out[b + 1] = x0 * si + x1 * co;
        }
    auto node = detail::make_node<S>(
        {r, c}, std::move(out), {an},
        [an, cos_tab, sin_tab, r, c, pairs](detail::TensorNode<S>& o) {
            ArrayX<S> g = o.grad;
            for (int i = 0; i < r; ++i)
                for (int p = 0; p < pairs; ++p) {
                    const std::int64_t b = static_cast<std::int64_t>(i) * c + 2 * p;
                    const S co = (*cos_tab)[static_cast<std::int64_t>(i) * pairs + p];
                    const S si = (*sin_tab)[static_cast<std::int64_t>(i) * pairs + p];
                    const S g0 = o.grad[b], g1 = o.grad[b + 1];
                    g[b] = g0 * co + g1 * si;  // transpose rotation
                    g[b + 1] = -g0 * si + g1 * co;
                }
            an->accumulate(g);
        });
    return Tensor<S>::wrap(node);
}

// Numerically stable binary cross-entropy on logits against constant targets.
template <typename S>
Tensor<S> bce_with_logits(const Tensor<S>& logits, const ArrayX<S>& targets) {
    detail::require(logits.size() == targets.size(), "bce_with_logits: target size mismatch");
    auto an = logits.node();
    ArrayX<S> y(an->value.size());
    for (std::int64_t i = 0; i < y.size(); ++i) {
        const S l = an->value[i];
        y[i] = std::max(l, S(0)) - l * targets[i] + std::log1p(std::exp(-std::abs(l)));
    }
    auto node = detail::make_node<S>(
        logits.shape(), std::move(y), {an}, [an, targets](detail::TensorNode<S>& o) {
            ArrayX<S> sig = S(1) / (S(1) + (-an->value).exp());
            an->accumulate((o.grad * (sig - targets)).eval());
        });
    return Tensor<S>::wrap(node);
}

// ---------------------------------------------------------------------------
// Backward pass.
// ---------------------------------------------------------------------------
template <typename S>
void backward(const Tensor<S>& loss) {
    using Node = detail::TensorNode<S>;
    if (!loss.requires_grad()) return;
    std::vector<std::shared_ptr<Node>> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<std::shared_ptr<Node>, std::size_t>> stack;
    stack.emplace_back(loss.node(), 0);
    visited.insert(loss.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        bool descended = false;
        while (next < node->parents.size()) {
            auto& p = node->parents[next++];
            if (p->requires_grad && !visited.count(p.get())) {
                visited.insert(p.get());
                stack.emplace_back(p, 0);
                descended = true;
                break;
            }
        }
        if (!descended && next >= stack.back().first->parents.size()) {
            order.push_back(stack.back().first);
            stack.pop_back();
        }
    }
    loss.node()->accumulate(ArrayX<S>::Ones(loss.size()));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        auto& node = *it;
        if (node->backprop && node->has_grad) node->backprop(*node);
    }
}

// ---------------------------------------------------------------------------
// Gradient checking against central finite differences.
// ---------------------------------------------------------------------------
template <typename S>
double grad_check(const std::function<Tensor<S>()>& fn, const std::vector<Tensor<S>>& params,
                  double eps = 1e-4) {
    if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
    for (auto& p : params) const_cast<Tensor<S>&>(p).clear_grad();
    Tensor<S> loss = fn();
    if (loss.size() != 1) throw std::invalid_argument("grad_check: fn must return a scalar");
    backward(loss);
    std::vector<ArrayX<S>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p.grad());

    double worst = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor<S>& p = const_cast<Tensor<S>&>(params[pi]);
        for (std::int64_t i = 0; i < p.size(); ++i) {
            const S saved = p.mutable_value()[i];
            auto eval_at = [&](double delta) {
                p.mutable_value()[i] = saved + static_cast<S>(delta);
                return static_cast<double>(fn().scalar());
            };
            // fourth-order central-difference stencil
            const double fp1 = eval_at(eps), fm1 = eval_at(-eps);
            const double fp2 = eval_at(2 * eps), fm2 = eval_at(-2 * eps);
            p.mutable_value()[i] = saved;
            const double num = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * eps);
            const double ana = static_cast<double>(analytic[pi][i]);
            const double denom = std::max({std::abs(num), std::abs(ana), 1e-8});
            worst = std::max(worst, std::abs(num - ana) / denom);
        }
    }
    return worst;
}

// ---------------------------------------------------------------------------
// Parameters, AdamW, schedule, EMA.
// ---------------------------------------------------------------------------
inline double lr_at(std::int64_t step, std::int64_t total_steps, std::int64_t warmup_steps,
                    double base_lr) {
    if (step < 0) throw std::invalid_argument("lr_at: negative step");
    if (warmup_steps > total_steps) throw std::invalid_argument("lr_at: warmup > total");
    if (warmup_steps > 0 && step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (step >= total_steps) return 0.0;
    double progress = static_cast<double>(step - warmup_steps) /
                      static_cast<double>(std::max<std::int64_t>(1, total_steps - warmup_steps));
    return base_lr * 0.5 * (1.0 + std::cos(M_PI * progress));
}

struct AdamWConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

template <typename S>
class ParamSet {
public:
    struct Entry {
        Tensor<S> tensor;
        ArrayX<S> m, v;  // Adam moments
        ArrayX<S> ema;
    };

    Tensor<S> add(const std::string& name, Shape shape, ArrayX<S> init) {
        if (entries_.count(name)) throw std::invalid_argument("duplicate parameter: " + name);
        Entry e;
        e.tensor = Tensor<S>::from_array(std::move(shape), std::move(init), true);
        e.m = ArrayX<S>::Zero(e.tensor.size());
        e.v = ArrayX<S>::Zero(e.tensor.size());
        e.ema = e.tensor.value();
        entries_.emplace(name, std::move(e));
        return entries_.at(name).tensor;
    }

    Tensor<S> add_zeros(const std::string& name, Shape shape) {
        std::int64_t n = shape_size(shape);
        return add(name, std::move(shape), ArrayX<S>::Zero(n));
    }

    Tensor<S> add_normal(const std::string& name, Shape shape, Rng& rng, double stddev) {
        std::int64_t n = shape_size(shape);
        ArrayX<S> a(n);
        for (std::int64_t i = 0; i < n; ++i) a[i] = static_cast<S>(stddev * rng.normal());
        return add(name, std::move(shape), std::move(a));
    }

    bool has(const std::string& name) const { return entries_.count(name) != 0; }
    Tensor<S> at(const std::string& name) const {
        auto it = entries_.find(name);
        if (it == entries_.end()) throw std::invalid_argument("unknown parameter: " + name);
        return it->second.tensor;
    }
    const std::map<std::string, Entry>& entries() const { return entries_; }
    std::map<std::string, Entry>& entries() { return entries_; }
    std::int64_t step_count() const { return step_; }
    void set_step_count(std::int64_t s) { step_ = s; }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (auto& [k, e] : entries_) n += e.tensor.size();
        return n;
    }

    void zero_grad() {
        for (auto& [k, e] : entries_) e.tensor.clear_grad();
    }

    // Frozen parameters receive no gradient and stay out of the backward walk.
    void set_requires_grad(bool v) {
        for (auto& [k, e] : entries_) e.tensor.set_requires_grad(v);
    }

    // Decoupled weight decay; bias-corrected moments.
    void adamw_step(const AdamWConfig& cfg) {
        ++step_;
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_));
        for (auto& [k, e] : entries_) {
            const ArrayX<S>& g = e.tensor.grad();
            e.m = static_cast<S>(cfg.beta1) * e.m + static_cast<S>(1.0 - cfg.beta1) * g;
            e.v = static_cast<S>(cfg.beta2) * e.v + static_cast<S>(1.0 - cfg.beta2) * g * g;
            ArrayX<S>& p = e.tensor.mutable_value();
            if (cfg.weight_decay != 0.0)
                p -= static_cast<S>(cfg.lr * cfg.weight_decay) * p;
            ArrayX<S> mhat = e.m / static_cast<S>(bc1);
            ArrayX<S> vhat = e.v / static_cast<S>(bc2);
            p -= static_cast<S>(cfg.lr) * mhat / (vhat.sqrt() + static_cast<S>(cfg.eps));
        }
    }

    void ema_update(double decay) {
        if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("ema decay must be in [0,1)");
        for (auto& [k, e] : entries_)
            e.ema = static_cast<S>(decay) * e.ema +
                    static_cast<S>(1.0 - decay) * e.tensor.value();
    }

    // In-place state restore: existing tensor handles keep pointing at the
    // same nodes, only the stored values change.
    void copy_state_from(const ParamSet& other) {
        if (other.entries_.size() != entries_.size())
            throw std::invalid_argument("copy_state_from: parameter sets differ");
        for (auto& [k, e] : entries_) {
            auto it = other.entries_.find(k);
            if (it == other.entries_.end())
                throw std::invalid_argument("copy_state_from: missing parameter " + k);
            e.tensor.mutable_value() = it->second.tensor.value();
            e.m = it->second.m;
            e.v = it->second.v;
            e.ema = it->second.ema;
        }
        step_ = other.step_;
    }

    // Detached copy (fresh tensors, moments, and EMA state).
    ParamSet deep_copy() const {
        ParamSet out;
        for (auto& [k, e] : entries_) {
            Entry c;
            c.tensor = Tensor<S>::from_array(e.tensor.shape(), e.tensor.value(), true);
            c.m = e.m;
            c.v = e.v;
            c.ema = e.ema;
            out.entries_.emplace(k, std::move(c));
        }
        out.step_ = step_;
        return out;
    }

    // Copy with parameter values replaced by their EMA shadows.
    ParamSet ema_copy() const {
        ParamSet out = deep_copy();
        for (auto& [k, e] : out.entries_) e.tensor.mutable_value() = entries_.at(k).ema;
        return out;
    }

    std::uint64_t value_hash() const {
        std::uint64_t h = 0xCBF29CE484222325ull;
        auto mix = [&h](const void* data, std::size_t len) {
            const unsigned char* p = static_cast<const unsigned char*>(data);
            for (std::size_t i = 0; i < len; ++i) {
                h ^= p[i];
                h *= 0x100000001B3ull;
            }
        };
        for (auto& [k, e] : entries_) {
            mix(k.data(), k.size());
            mix(e.tensor.value().data(), sizeof(S) * static_cast<std::size_t>(e.tensor.size()));
        }
        return h;
    }

private:
    std::map<std::string, Entry> entries_;
    std::int64_t step_ = 0;
};

// Standalone EMA helper matching the elementwise definition.
template <typename S>
ArrayX<S> ema_update(const ArrayX<S>& ema, const ArrayX<S>& params, double decay) {
    if (decay < 0.0 || decay >= 1.0) throw std::invalid_argument("ema decay must be in [0,1)");
    return static_cast<S>(decay) * ema + static_cast<S>(1.0 - decay) * params;
}

}  // namespace seenflow
