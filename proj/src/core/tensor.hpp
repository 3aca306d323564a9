#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "common.hpp"

namespace lsr::ad {

// Reverse-mode differentiation over dense row-major tensors.
//
// Every operation builds a node whose backward closure accumulates into the
// gradients of its parents. Nodes carry a monotonically increasing creation
// id; the backward pass walks reachable nodes in descending id order, which
// is a topological order of construction and therefore deterministic.

template <typename Real>
struct TensorNode {
    Shape shape;
    std::vector<Real> value;
    std::vector<Real> grad;  // sized lazily by the backward pass
    bool requires_grad = false;
    std::uint64_t id = 0;
    std::string name;  // leaves only; used in optimizer diagnostics
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
    }
};

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

template <typename Real>
class Tensor {
public:
    using Node = TensorNode<Real>;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from_data(Shape shape, std::vector<Real> data, bool requires_grad = false) {
        if (shape_numel(shape) != data.size())
            throw Error(ErrorCode::Dimension,
                        "tensor data length " + std::to_string(data.size()) +
                            " does not match shape " + shape_to_string(shape));
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        n->id = next_node_id();
        return Tensor(std::move(n));
    }

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        std::vector<Real> d(shape_numel(shape), Real(0));
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor full(Shape shape, Real v, bool requires_grad = false) {
        std::vector<Real> d(shape_numel(shape), v);
        return from_data(std::move(shape), std::move(d), requires_grad);
    }

    static Tensor scalar(Real v, bool requires_grad = false) {
        return from_data(Shape{}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::string& name() const { return node_->name; }
    void set_name(std::string n) { node_->name = std::move(n); }

    std::span<const Real> values() const { return node_->value; }
    // Leaf mutation is reserved for the optimizer and test setup; graphs built
    // from a leaf before mutation must not be reused afterwards.
    std::span<Real> values_mut() { return node_->value; }

    std::span<const Real> grad() const { return node_->grad; }
    bool has_grad() const { return node_->grad.size() == node_->value.size(); }
    void zero_grad() { node_->grad.assign(node_->value.size(), Real(0)); }

    Real item() const {
        if (size() != 1)
            throw Error(ErrorCode::Argument, "item() requires a scalar tensor, got shape " +
                                                 shape_to_string(shape()));
        return node_->value[0];
    }

    // Copy of the values with no graph history.
    Tensor detach() const {
        return from_data(node_->shape, node_->value, false);
    }

    std::shared_ptr<Node> node() const { return node_; }
    Node& node_ref() const { return *node_; }

private:
    std::shared_ptr<Node> node_;
};

// Factory for operations: wires parents and a backward closure only when some
// parent participates in differentiation, so inference-only graphs stay flat.
template <typename Real>
Tensor<Real> make_op(Shape shape, std::vector<Real> value,
                     std::vector<Tensor<Real>> parents,
                     std::function<void(TensorNode<Real>&)> backward_fn) {
    auto n = std::make_shared<TensorNode<Real>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->id = next_node_id();
    bool rg = false;
    for (const auto& p : parents) rg = rg || p.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        for (auto& p : parents) n->parents.push_back(p.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor<Real>(std::move(n));
}

template <typename Real>
void backward(const Tensor<Real>& root) {
    if (root.size() != 1)
        throw Error(ErrorCode::Argument,
                    "backward expects a scalar root, got shape " + shape_to_string(root.shape()));
    if (!root.requires_grad()) return;

    using Node = TensorNode<Real>;
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{root.node().get()};
    while (!stack.empty()) {
        Node* n = stack.back();
        stack.pop_back();
        if (!seen.insert(n).second) continue;
        order.push_back(n);
        for (auto& p : n->parents)
            if (p->requires_grad) stack.push_back(p.get());
    }
    std::sort(order.begin(), order.end(),
              [](const Node* a, const Node* b) { return a->id > b->id; });

    for (Node* n : order) n->ensure_grad();
    root.node()->grad[0] += Real(1);
    for (Node* n : order) {
        if (n->backward_fn) {
            for (auto& p : n->parents)
                if (p->requires_grad) p->ensure_grad();
            n->backward_fn(*n);
        }
    }
}

// ---------------------------------------------------------------------------
// Broadcasting
// ---------------------------------------------------------------------------

inline Shape broadcast_shape(const Shape& a, const Shape& b) {
    Shape out(std::max(a.size(), b.size()));
    for (std::size_t i = 0; i < out.size(); ++i) {
        std::size_t da = i < out.size() - a.size() ? 1 : a[i - (out.size() - a.size())];
        std::size_t db = i < out.size() - b.size() ? 1 : b[i - (out.size() - b.size())];
        if (da != db && da != 1 && db != 1)
            throw Error(ErrorCode::Dimension, "shapes " + shape_to_string(a) + " and " +
                                                  shape_to_string(b) + " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

// Row-major strides with zeros on broadcast (size-1 or missing) axes.
inline std::vector<std::size_t> broadcast_strides(const Shape& in, const Shape& out) {
    std::vector<std::size_t> strides(out.size(), 0);
    std::size_t s = 1;
    for (std::size_t i = 0; i < in.size(); ++i) {
        std::size_t axis = in.size() - 1 - i;
        std::size_t out_axis = out.size() - 1 - i;
        strides[out_axis] = (in[axis] == 1) ? 0 : s;
        s *= in[axis];
    }
    return strides;
}

// Sums `grad` (laid out as `out_shape`) down to `in_shape`.
template <typename Real>
std::vector<Real> reduce_to_shape(const std::vector<Real>& grad, const Shape& out_shape,
                                  const Shape& in_shape) {
    std::vector<Real> out(shape_numel(in_shape), Real(0));
    auto strides = broadcast_strides(in_shape, out_shape);
    std::vector<std::size_t> idx(out_shape.size(), 0);
    std::size_t n = grad.size();
    std::size_t src_off = 0;  // walks grad linearly
    std::size_t dst_off = 0;
    for (src_off = 0; src_off < n; ++src_off) {
        out[dst_off] += grad[src_off];
        for (std::size_t ax = out_shape.size(); ax-- > 0;) {
            idx[ax]++;
            dst_off += strides[ax];
            if (idx[ax] < out_shape[ax]) break;
            dst_off -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    return out;
}

namespace detail {

template <typename Real, typename Fwd, typename DfA, typename DfB>
Tensor<Real> binary_op(const Tensor<Real>& a, const Tensor<Real>& b, Fwd fwd, DfA dfa, DfB dfb) {
    const Shape out_shape = broadcast_shape(a.shape(), b.shape());
    const std::size_t n = shape_numel(out_shape);
    std::vector<Real> value(n);

    if (a.shape() == b.shape()) {
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i) value[i] = fwd(av[i], bv[i]);
    } else {
        auto sa = broadcast_strides(a.shape(), out_shape);
        auto sb = broadcast_strides(b.shape(), out_shape);
        std::vector<std::size_t> idx(out_shape.size(), 0);
        std::size_t oa = 0, ob = 0;
        auto av = a.values();
        auto bv = b.values();
        for (std::size_t i = 0; i < n; ++i) {
            value[i] = fwd(av[oa], bv[ob]);
            for (std::size_t ax = out_shape.size(); ax-- > 0;) {
                idx[ax]++;
                oa += sa[ax];
                ob += sb[ax];
                if (idx[ax] < out_shape[ax]) break;
                oa -= sa[ax] * out_shape[ax];
                ob -= sb[ax] * out_shape[ax];
                idx[ax] = 0;
            }
        }
    }

    auto an = a.node();
    auto bn = b.node();
    Shape ashape = a.shape(), bshape = b.shape();
    return make_op<Real>(
        out_shape, std::move(value), {a, b},
        [an, bn, ashape, bshape, out_shape, dfa, dfb](TensorNode<Real>& self) {
            const std::size_t n = self.value.size();
            std::vector<Real> ga(n), gb(n);
            if (ashape == bshape) {
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] = self.grad[i] * dfa(an->value[i], bn->value[i]);
                    gb[i] = self.grad[i] * dfb(an->value[i], bn->value[i]);
                }
            } else {
                auto sa = broadcast_strides(ashape, self.shape);
                auto sb = broadcast_strides(bshape, self.shape);
                std::vector<std::size_t> idx(self.shape.size(), 0);
                std::size_t oa = 0, ob = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    ga[i] = self.grad[i] * dfa(an->value[oa], bn->value[ob]);
                    gb[i] = self.grad[i] * dfb(an->value[oa], bn->value[ob]);
                    for (std::size_t ax = self.shape.size(); ax-- > 0;) {
                        idx[ax]++;
                        oa += sa[ax];
                        ob += sb[ax];
                        if (idx[ax] < self.shape[ax]) break;
                        oa -= sa[ax] * self.shape[ax];
                        ob -= sb[ax] * self.shape[ax];
                        idx[ax] = 0;
                    }
                }
            }
            if (an->requires_grad) {
                auto ra = reduce_to_shape(ga, self.shape, ashape);
                for (std::size_t i = 0; i < ra.size(); ++i) an->grad[i] += ra[i];
            }
            if (bn->requires_grad) {
                auto rb = reduce_to_shape(gb, self.shape, bshape);
                for (std::size_t i = 0; i < rb.size(); ++i) bn->grad[i] += rb[i];
            }
        });
}

template <typename Real, typename Fwd, typename Df>
Tensor<Real> unary_op(const Tensor<Real>& a, Fwd fwd, Df df) {
    const std::size_t n = a.size();
    std::vector<Real> value(n);
    auto av = a.values();
    for (std::size_t i = 0; i < n; ++i) value[i] = fwd(av[i]);
    auto an = a.node();
    return make_op<Real>(a.shape(), std::move(value), {a},
                         [an, df](TensorNode<Real>& self) {
                             if (!an->requires_grad) return;
                             for (std::size_t i = 0; i < self.value.size(); ++i)
                                 an->grad[i] += self.grad[i] * df(an->value[i], self.value[i]);
                         });
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and scalar ops
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> add(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x + y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> sub(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x - y; }, [](Real, Real) { return Real(1); },
        [](Real, Real) { return Real(-1); });
}

template <typename Real>
Tensor<Real> mul(const Tensor<Real>& a, const Tensor<Real>& b) {
    return detail::binary_op(
        a, b, [](Real x, Real y) { return x * y; }, [](Real, Real y) { return y; },
        [](Real x, Real) { return x; });
}

template <typename Real>
Tensor<Real> scale(const Tensor<Real>& a, Real c) {
    return detail::unary_op(
        a, [c](Real x) { return x * c; }, [c](Real, Real) { return c; });
}

template <typename Real>
Tensor<Real> add_scalar(const Tensor<Real>& a, Real c) {
    return detail::unary_op(
        a, [c](Real x) { return x + c; }, [](Real, Real) { return Real(1); });
}

template <typename Real>
Tensor<Real> neg(const Tensor<Real>& a) {
    return scale(a, Real(-1));
}

template <typename Real>
Tensor<Real> exp(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return std::exp(x); }, [](Real, Real y) { return y; });
}

template <typename Real>
Tensor<Real> log(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return std::log(x); }, [](Real x, Real) { return Real(1) / x; });
}

template <typename Real>
Tensor<Real> sigmoid(const Tensor<Real>& a) {
    return detail::unary_op(
        a,
        [](Real x) {
            return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                : std::exp(x) / (Real(1) + std::exp(x));
        },
        [](Real, Real y) { return y * (Real(1) - y); });
}

template <typename Real>
Tensor<Real> softplus(const Tensor<Real>& a) {
    return detail::unary_op(
        a,
        [](Real x) {
            // log(1 + e^x), computed without overflow for large |x|
            return x > Real(0) ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
        },
        [](Real x, Real) {
            return x >= Real(0) ? Real(1) / (Real(1) + std::exp(-x))
                                : std::exp(x) / (Real(1) + std::exp(x));
        });
}

template <typename Real>
Tensor<Real> relu(const Tensor<Real>& a) {
    return detail::unary_op(
        a, [](Real x) { return x > Real(0) ? x : Real(0); },
        [](Real x, Real) { return x > Real(0) ? Real(1) : Real(0); });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

namespace detail {

// C[m×n] += A[m×k] · B[k×n], plain ikj loop.
template <typename Real>
void matmul_accum(const Real* A, const Real* B, Real* C, std::size_t m, std::size_t k,
                  std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* a_row = A + i * k;
        Real* c_row = C + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            Real a = a_row[p];
            if (a == Real(0)) continue;
            const Real* b_row = B + p * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

// C[m×n] += A[m×k] · B[n×k]^T  (dot products of rows).
template <typename Real>
void matmul_nt_accum(const Real* A, const Real* B, Real* C, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const Real* a_row = A + i * k;
        Real* c_row = C + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const Real* b_row = B + j * k;
            Real acc = 0;
            for (std::size_t p = 0; p < k; ++p) acc += a_row[p] * b_row[p];
            c_row[j] += acc;
        }
    }
}

// C[m×n] += A[k×m]^T · B[k×n].
template <typename Real>
void matmul_tn_accum(const Real* A, const Real* B, Real* C, std::size_t m, std::size_t k,
                     std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const Real* a_row = A + p * m;
        const Real* b_row = B + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            Real a = a_row[i];
            if (a == Real(0)) continue;
            Real* c_row = C + i * n;
            for (std::size_t j = 0; j < n; ++j) c_row[j] += a * b_row[j];
        }
    }
}

}  // namespace detail

template <typename Real>
Tensor<Real> matmul(const Tensor<Real>& a, const Tensor<Real>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0])
        throw Error(ErrorCode::Dimension, "matmul shapes " + shape_to_string(a.shape()) + " and " +
                                              shape_to_string(b.shape()) + " are incompatible");
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    std::vector<Real> value(m * n, Real(0));
    detail::matmul_accum(a.values().data(), b.values().data(), value.data(), m, k, n);

    auto an = a.node();
    auto bn = b.node();
    return make_op<Real>({m, n}, std::move(value), {a, b},
                         [an, bn, m, k, n](TensorNode<Real>& self) {
                             // dA = G · B^T, dB = A^T · G
                             if (an->requires_grad)
                                 detail::matmul_nt_accum(self.grad.data(), bn->value.data(),
                                                         an->grad.data(), m, n, k);
                             if (bn->requires_grad)
                                 detail::matmul_tn_accum(an->value.data(), self.grad.data(),
                                                         bn->grad.data(), k, m, n);
                         });
}

template <typename Real>
Tensor<Real> transpose(const Tensor<Real>& a) {
    if (a.rank() != 2)
        throw Error(ErrorCode::Dimension,
                    "transpose expects a matrix, got " + shape_to_string(a.shape()));
    const std::size_t m = a.shape()[0], n = a.shape()[1];
    std::vector<Real> value(m * n);
    auto av = a.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) value[j * m + i] = av[i * n + j];
    auto an = a.node();
    return make_op<Real>({n, m}, std::move(value), {a}, [an, m, n](TensorNode<Real>& self) {
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) an->grad[i * n + j] += self.grad[j * m + i];
    });
}

template <typename Real>
Tensor<Real> concat(const Tensor<Real>& a, const Tensor<Real>& b, std::size_t axis) {
    if (a.rank() != b.rank() || axis >= a.rank())
        throw Error(ErrorCode::Dimension, "concat axis " + std::to_string(axis) +
                                              " invalid for shapes " + shape_to_string(a.shape()) +
                                              ", " + shape_to_string(b.shape()));
    for (std::size_t i = 0; i < a.rank(); ++i)
        if (i != axis && a.shape()[i] != b.shape()[i])
            throw Error(ErrorCode::Dimension, "concat shapes " + shape_to_string(a.shape()) +
                                                  " and " + shape_to_string(b.shape()) +
                                                  " differ off-axis");
    Shape out_shape = a.shape();
    out_shape[axis] += b.shape()[axis];

    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    const std::size_t wa = a.shape()[axis] * inner;
    const std::size_t wb = b.shape()[axis] * inner;

    std::vector<Real> value(shape_numel(out_shape));
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(av.data() + o * wa, wa, value.data() + o * (wa + wb));
        std::copy_n(bv.data() + o * wb, wb, value.data() + o * (wa + wb) + wa);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<Real>(out_shape, std::move(value), {a, b},
                         [an, bn, outer, wa, wb](TensorNode<Real>& self) {
                             for (std::size_t o = 0; o < outer; ++o) {
                                 const Real* g = self.grad.data() + o * (wa + wb);
                                 if (an->requires_grad)
                                     for (std::size_t i = 0; i < wa; ++i)
                                         an->grad[o * wa + i] += g[i];
                                 if (bn->requires_grad)
                                     for (std::size_t i = 0; i < wb; ++i)
                                         bn->grad[o * wb + i] += g[wa + i];
                             }
                         });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> sum(const Tensor<Real>& a) {
    Real s = 0;
    for (Real v : a.values()) s += v;
    auto an = a.node();
    return make_op<Real>({}, {s}, {a}, [an](TensorNode<Real>& self) {
        const Real g = self.grad[0];
        for (auto& x : an->grad) x += g;
    });
}

template <typename Real>
Tensor<Real> mean(const Tensor<Real>& a) {
    const Real inv = Real(1) / Real(a.size());
    Real s = 0;
    for (Real v : a.values()) s += v;
    auto an = a.node();
    return make_op<Real>({}, {s * inv}, {a}, [an, inv](TensorNode<Real>& self) {
        const Real g = self.grad[0] * inv;
        for (auto& x : an->grad) x += g;
    });
}

// L2 norm over the trailing axis: [..., D] -> [...].
template <typename Real>
Tensor<Real> row_l2norm(const Tensor<Real>& a) {
    if (a.rank() < 1)
        throw Error(ErrorCode::Dimension, "row_l2norm needs at least one axis");
    const std::size_t d = a.shape().back();
    const std::size_t rows = a.size() / d;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    std::vector<Real> value(rows);
    auto av = a.values();
    for (std::size_t r = 0; r < rows; ++r) {
        Real s = 0;
        for (std::size_t j = 0; j < d; ++j) {
            Real x = av[r * d + j];
            s += x * x;
        }
        value[r] = std::sqrt(s);
    }
    auto an = a.node();
    return make_op<Real>(out_shape, std::move(value), {a},
                         [an, rows, d](TensorNode<Real>& self) {
                             for (std::size_t r = 0; r < rows; ++r) {
                                 Real y = self.value[r];
                                 Real denom = y > Real(1e-12) ? y : Real(1e-12);
                                 Real g = self.grad[r] / denom;
                                 for (std::size_t j = 0; j < d; ++j)
                                     an->grad[r * d + j] += g * an->value[r * d + j];
                             }
                         });
}

template <typename Real>
Tensor<Real> l2norm(const Tensor<Real>& a) {
    Real s = 0;
    for (Real v : a.values()) s += v * v;
    Real y = std::sqrt(s);
    auto an = a.node();
    return make_op<Real>({}, {y}, {a}, [an](TensorNode<Real>& self) {
        Real y = self.value[0];
        Real denom = y > Real(1e-12) ? y : Real(1e-12);
        Real g = self.grad[0] / denom;
        for (std::size_t i = 0; i < an->value.size(); ++i) an->grad[i] += g * an->value[i];
    });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> softmax(const Tensor<Real>& a, std::size_t axis) {
    if (axis >= a.rank())
        throw Error(ErrorCode::Argument, "softmax axis " + std::to_string(axis) +
                                             " invalid for shape " + shape_to_string(a.shape()));
    for (Real v : a.values())
        if (!std::isfinite(v))
            throw Error(ErrorCode::Numeric, "softmax input contains a non-finite value");

    const std::size_t lanes = a.shape()[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    const std::size_t outer = a.size() / (lanes * inner);

    std::vector<Real> value(a.size());
    auto av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * lanes * inner + in;
            Real mx = av[base];
            for (std::size_t l = 1; l < lanes; ++l)
                mx = std::max(mx, av[base + l * inner]);
            Real denom = 0;
            for (std::size_t l = 0; l < lanes; ++l) {
                Real e = std::exp(av[base + l * inner] - mx);
                value[base + l * inner] = e;
                denom += e;
            }
            for (std::size_t l = 0; l < lanes; ++l) value[base + l * inner] /= denom;
        }
    }
    auto an = a.node();
    return make_op<Real>(a.shape(), std::move(value), {a},
                         [an, outer, lanes, inner](TensorNode<Real>& self) {
                             // dx = y * (g - sum(g*y over the axis))
                             for (std::size_t o = 0; o < outer; ++o) {
                                 for (std::size_t in = 0; in < inner; ++in) {
                                     const std::size_t base = o * lanes * inner + in;
                                     Real dot = 0;
                                     for (std::size_t l = 0; l < lanes; ++l) {
                                         std::size_t i = base + l * inner;
                                         dot += self.grad[i] * self.value[i];
                                     }
                                     for (std::size_t l = 0; l < lanes; ++l) {
                                         std::size_t i = base + l * inner;
                                         an->grad[i] += self.value[i] * (self.grad[i] - dot);
                                     }
                                 }
                             }
                         });
}

// ---------------------------------------------------------------------------
// Cosine similarity
// ---------------------------------------------------------------------------

namespace detail {

template <typename Real>
Real guarded_norm(const Real* v, std::size_t d, Real eps, bool* clamped) {
    Real s = 0;
    for (std::size_t j = 0; j < d; ++j) s += v[j] * v[j];
    Real n = std::sqrt(s);
    *clamped = n <= eps;
    return *clamped ? eps : n;
}

}  // namespace detail

// Row-wise cosine similarity of two tensors of identical shape [..., D] -> [...].
template <typename Real>
Tensor<Real> cosine_rows(const Tensor<Real>& a, const Tensor<Real>& b, Real eps = Real(1e-8)) {
    if (a.shape() != b.shape() || a.rank() < 1)
        throw Error(ErrorCode::Dimension, "cosine_rows shapes " + shape_to_string(a.shape()) +
                                              " and " + shape_to_string(b.shape()) + " must match");
    const std::size_t d = a.shape().back();
    const std::size_t rows = a.size() / d;
    Shape out_shape(a.shape().begin(), a.shape().end() - 1);
    std::vector<Real> value(rows);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t r = 0; r < rows; ++r) {
        bool ca, cb;
        Real na = detail::guarded_norm(av.data() + r * d, d, eps, &ca);
        Real nb = detail::guarded_norm(bv.data() + r * d, d, eps, &cb);
        Real dot = 0;
        for (std::size_t j = 0; j < d; ++j) dot += av[r * d + j] * bv[r * d + j];
        value[r] = dot / (na * nb);
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<Real>(
        out_shape, std::move(value), {a, b}, [an, bn, rows, d, eps](TensorNode<Real>& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const Real* ar = an->value.data() + r * d;
                const Real* br = bn->value.data() + r * d;
                bool ca, cb;
                Real na = detail::guarded_norm(ar, d, eps, &ca);
                Real nb = detail::guarded_norm(br, d, eps, &cb);
                Real c = self.value[r];
                Real g = self.grad[r];
                if (an->requires_grad) {
                    Real inv = g / (na * nb);
                    Real proj = ca ? Real(0) : g * c / (na * na);
                    for (std::size_t j = 0; j < d; ++j)
                        an->grad[r * d + j] += inv * br[j] - proj * ar[j];
                }
                if (bn->requires_grad) {
                    Real inv = g / (na * nb);
                    Real proj = cb ? Real(0) : g * c / (nb * nb);
                    for (std::size_t j = 0; j < d; ++j)
                        bn->grad[r * d + j] += inv * ar[j] - proj * br[j];
                }
            }
        });
}

// All-pairs cosine similarity: a[M,D] × b[N,D] -> [M,N].
template <typename Real>
Tensor<Real> cosine_matrix(const Tensor<Real>& a, const Tensor<Real>& b, Real eps = Real(1e-8)) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[1])
        throw Error(ErrorCode::Dimension, "cosine_matrix shapes " + shape_to_string(a.shape()) +
                                              " and " + shape_to_string(b.shape()) +
                                              " must share the trailing axis");
    const std::size_t m = a.shape()[0], d = a.shape()[1], n = b.shape()[0];
    std::vector<Real> value(m * n);
    std::vector<Real> na(m), nb(n);
    std::vector<bool> ca(m), cb(n);
    auto av = a.values();
    auto bv = b.values();
    for (std::size_t i = 0; i < m; ++i) {
        bool c;
        na[i] = detail::guarded_norm(av.data() + i * d, d, eps, &c);
        ca[i] = c;
    }
    for (std::size_t j = 0; j < n; ++j) {
        bool c;
        nb[j] = detail::guarded_norm(bv.data() + j * d, d, eps, &c);
        cb[j] = c;
    }
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            Real dot = 0;
            for (std::size_t p = 0; p < d; ++p) dot += av[i * d + p] * bv[j * d + p];
            value[i * n + j] = dot / (na[i] * nb[j]);
        }
    }
    auto an = a.node();
    auto bn = b.node();
    return make_op<Real>(
        {m, n}, std::move(value), {a, b},
        [an, bn, m, d, n, na, nb, ca, cb](TensorNode<Real>& self) {
            if (an->requires_grad) {
                for (std::size_t i = 0; i < m; ++i) {
                    const Real* ar = an->value.data() + i * d;
                    Real gc = 0;  // sum_j g_ij * c_ij
                    for (std::size_t j = 0; j < n; ++j)
                        gc += self.grad[i * n + j] * self.value[i * n + j];
                    Real proj = ca[i] ? Real(0) : gc / (na[i] * na[i]);
                    for (std::size_t p = 0; p < d; ++p) {
                        Real acc = 0;
                        for (std::size_t j = 0; j < n; ++j)
                            acc += self.grad[i * n + j] * bn->value[j * d + p] / nb[j];
                        an->grad[i * d + p] += acc / na[i] - proj * ar[p];
                    }
                }
            }
            if (bn->requires_grad) {
                for (std::size_t j = 0; j < n; ++j) {
                    const Real* br = bn->value.data() + j * d;
                    Real gc = 0;
                    for (std::size_t i = 0; i < m; ++i)
                        gc += self.grad[i * n + j] * self.value[i * n + j];
                    Real proj = cb[j] ? Real(0) : gc / (nb[j] * nb[j]);
                    for (std::size_t p = 0; p < d; ++p) {
                        Real acc = 0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += self.grad[i * n + j] * an->value[i * d + p] / na[i];
                        bn->grad[j * d + p] += acc / nb[j] - proj * br[p];
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Convenience operators and initializers
// ---------------------------------------------------------------------------

template <typename Real>
Tensor<Real> operator+(const Tensor<Real>& a, const Tensor<Real>& b) { return add(a, b); }
template <typename Real>
Tensor<Real> operator-(const Tensor<Real>& a, const Tensor<Real>& b) { return sub(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, const Tensor<Real>& b) { return mul(a, b); }
template <typename Real>
Tensor<Real> operator*(const Tensor<Real>& a, Real c) { return scale(a, c); }
template <typename Real>
Tensor<Real> operator*(Real c, const Tensor<Real>& a) { return scale(a, c); }

template <typename Real>
Tensor<Real> randn(Shape shape, std::mt19937_64& rng, Real stddev = Real(1),
                   bool requires_grad = false) {
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<Real> d(shape_numel(shape));
    for (auto& v : d) v = static_cast<Real>(dist(rng)) * stddev;
    return Tensor<Real>::from_data(std::move(shape), std::move(d), requires_grad);
}

}  // namespace lsr::ad
