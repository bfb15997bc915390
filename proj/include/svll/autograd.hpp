#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "svll/tensor.hpp"

namespace svll {

// Reverse-mode graph over 2-D tensors. Scalars are 1x1, row vectors 1xC.
// Each op builds a node holding its forward value and a closure that pushes
// the node's gradient into its parents. backward() runs the closures in
// reverse topological order; leaf nodes flush into their Parameter's grad.

template <typename T>
struct GraphNode {
    Tensor<T> val;
    Tensor<T> grad;
    std::vector<std::shared_ptr<GraphNode>> parents;
    std::function<void()> back;
    Parameter<T>* param = nullptr;
    const char* op = "leaf";
};

template <typename T>
class Value {
   public:
    Value() = default;
    explicit Value(std::shared_ptr<GraphNode<T>> n) : node_(std::move(n)) {}

    const Tensor<T>& val() const { return node_->val; }
    const Tensor<T>& grad() const { return node_->grad; }
    std::shared_ptr<GraphNode<T>> node() const { return node_; }

    std::size_t rows() const { return node_->val.rows(); }
    std::size_t cols() const { return node_->val.cols(); }
    T item() const { return node_->val.item(); }

    explicit operator bool() const { return static_cast<bool>(node_); }

   private:
    std::shared_ptr<GraphNode<T>> node_;
};

namespace detail {

template <typename T>
std::shared_ptr<GraphNode<T>> new_node(Tensor<T> v, const char* op) {
    auto n = std::make_shared<GraphNode<T>>();
    n->grad = Tensor<T>(v.shape, T(0));
    n->val = std::move(v);
    n->op = op;
    if (!n->val.all_finite()) {
        throw std::runtime_error(std::string("autograd: non-finite forward value in op '") + op + "'");
    }
    return n;
}

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw std::invalid_argument("autograd: " + msg);
}

}  // namespace detail

/// Wrap a plain tensor as a graph constant (no gradient flows into it).
template <typename T>
Value<T> constant(Tensor<T> t, const char* name = "const") {
    auto n = detail::new_node(std::move(t), name);
    return Value<T>(n);
}

template <typename T>
Value<T> constant_scalar(T v) {
    return constant(Tensor<T>::scalar(v), "const_scalar");
}

/// Leaf over a Parameter. The parameter's value is viewed as a rows x cols
/// matrix (flat layout unchanged); on backward the node gradient is
/// accumulated into param.grad when the parameter is trainable.
template <typename T>
Value<T> leaf(Parameter<T>& p, std::size_t rows, std::size_t cols) {
    detail::require(rows * cols == p.value.size(), "leaf reshape mismatch for '" + p.name + "'");
    auto n = detail::new_node(p.value.reshaped(rows, cols), "leaf");
    n->param = &p;
    std::weak_ptr<GraphNode<T>> self = n;
    Parameter<T>* pp = &p;
    n->back = [self, pp]() {
        auto s = self.lock();
        if (!pp->trainable) return;
        for (std::size_t i = 0; i < s->grad.size(); ++i) pp->grad[i] += s->grad[i];
    };
    return Value<T>(n);
}

/// Leaf using the parameter's own (rank-2) shape.
template <typename T>
Value<T> leaf(Parameter<T>& p) {
    detail::require(p.value.rank() == 2, "leaf: parameter '" + p.name + "' is not rank-2");
    return leaf(p, p.value.shape[0], p.value.shape[1]);
}

template <typename T>
Value<T> add(Value<T> a, Value<T> b) {
    detail::require(a.val().same_shape(b.val()), "add shape mismatch " + a.val().shape_str() + " vs " + b.val().shape_str());
    Tensor<T> out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
    auto n = detail::new_node(std::move(out), "add");
    n->parents = {a.node(), b.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), bn = b.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) {
            an->grad[i] += s->grad[i];
            bn->grad[i] += s->grad[i];
        }
    };
    return Value<T>(n);
}

template <typename T>
Value<T> sub(Value<T> a, Value<T> b) {
    detail::require(a.val().same_shape(b.val()), "sub shape mismatch");
    Tensor<T> out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.val()[i];
    auto n = detail::new_node(std::move(out), "sub");
    n->parents = {a.node(), b.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), bn = b.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) {
            an->grad[i] += s->grad[i];
            bn->grad[i] -= s->grad[i];
        }
    };
    return Value<T>(n);
}

/// Elementwise product.
template <typename T>
Value<T> mul(Value<T> a, Value<T> b) {
    detail::require(a.val().same_shape(b.val()), "mul shape mismatch");
    Tensor<T> out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
    auto n = detail::new_node(std::move(out), "mul");
    n->parents = {a.node(), b.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), bn = b.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) {
            an->grad[i] += s->grad[i] * bn->val[i];
            bn->grad[i] += s->grad[i] * an->val[i];
        }
    };
    return Value<T>(n);
}

/// Multiply by a compile-time-known scalar constant.
template <typename T>
Value<T> scale(Value<T> a, T c) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v *= c;
    auto n = detail::new_node(std::move(out), "scale");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), c]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) an->grad[i] += s->grad[i] * c;
    };
    return Value<T>(n);
}

/// Add a 1xC bias row to every row of a RxC matrix.
template <typename T>
Value<T> add_bias(Value<T> a, Value<T> bias) {
    detail::require(bias.rows() == 1 && bias.cols() == a.cols(), "add_bias wants 1xC bias");
    Tensor<T> out = a.val();
    const std::size_t R = a.rows(), C = a.cols();
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) += bias.val()[c];
    auto n = detail::new_node(std::move(out), "add_bias");
    n->parents = {a.node(), bias.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), bn = bias.node(), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) {
                an->grad.at(r, c) += s->grad.at(r, c);
                bn->grad[c] += s->grad.at(r, c);
            }
    };
    return Value<T>(n);
}

template <typename T>
Value<T> matmul(Value<T> a, Value<T> b) {
    detail::require(a.cols() == b.rows(), "matmul inner dims " + a.val().shape_str() + " * " + b.val().shape_str());
    const std::size_t R = a.rows(), K = a.cols(), C = b.cols();
    Tensor<T> out = Tensor<T>::matrix(R, C);
    for (std::size_t r = 0; r < R; ++r) {
        for (std::size_t k = 0; k < K; ++k) {
            const T av = a.val().at(r, k);
            if (av == T(0)) continue;
            const T* brow = &b.val().data[k * C];
            T* orow = &out.data[r * C];
            for (std::size_t c = 0; c < C; ++c) orow[c] += av * brow[c];
        }
    }
    auto n = detail::new_node(std::move(out), "matmul");
    n->parents = {a.node(), b.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), bn = b.node(), R, K, C]() {
        auto s = self.lock();
        // dA = dC * B^T
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t k = 0; k < K; ++k) {
                T acc = T(0);
                const T* grow = &s->grad.data[r * C];
                const T* brow = &bn->val.data[k * C];
                for (std::size_t c = 0; c < C; ++c) acc += grow[c] * brow[c];
                an->grad.at(r, k) += acc;
            }
        // dB = A^T * dC
        for (std::size_t k = 0; k < K; ++k)
            for (std::size_t r = 0; r < R; ++r) {
                const T av = an->val.at(r, k);
                if (av == T(0)) continue;
                const T* grow = &s->grad.data[r * C];
                T* brow = &bn->grad.data[k * C];
                for (std::size_t c = 0; c < C; ++c) brow[c] += av * grow[c];
            }
    };
    return Value<T>(n);
}

template <typename T>
Value<T> transpose(Value<T> a) {
    const std::size_t R = a.rows(), C = a.cols();
    Tensor<T> out = Tensor<T>::matrix(C, R);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(c, r) = a.val().at(r, c);
    auto n = detail::new_node(std::move(out), "transpose");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) an->grad.at(r, c) += s->grad.at(c, r);
    };
    return Value<T>(n);
}

template <typename T>
Value<T> exp_op(Value<T> a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::exp(v);
    auto n = detail::new_node(std::move(out), "exp");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) an->grad[i] += s->grad[i] * s->val[i];
    };
    return Value<T>(n);
}

template <typename T>
Value<T> log_op(Value<T> a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::log(v);
    auto n = detail::new_node(std::move(out), "log");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) an->grad[i] += s->grad[i] / an->val[i];
    };
    return Value<T>(n);
}

/// Elementwise sqrt, clamped at zero so tiny negative rounding noise
/// (e.g. squared distances of identical rows) does not produce NaN.
template <typename T>
Value<T> sqrt_op(Value<T> a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::sqrt(std::max(v, T(0)));
    auto n = detail::new_node(std::move(out), "sqrt");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) {
            const T denom = std::max(s->val[i], T(1e-12));
            an->grad[i] += s->grad[i] * T(0.5) / denom;
        }
    };
    return Value<T>(n);
}

template <typename T>
Value<T> relu(Value<T> a) {
    Tensor<T> out = a.val();
    for (auto& v : out.data) v = std::max(v, T(0));
    auto n = detail::new_node(std::move(out), "relu");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i)
            if (an->val[i] > T(0)) an->grad[i] += s->grad[i];
    };
    return Value<T>(n);
}

/// Exact (erf-based) GELU.
template <typename T>
Value<T> gelu(Value<T> a) {
    constexpr double inv_sqrt2 = 0.7071067811865475244;
    constexpr double inv_sqrt2pi = 0.3989422804014326779;
    Tensor<T> out = a.val();
    for (auto& v : out.data) {
        const double x = static_cast<double>(v);
        v = static_cast<T>(0.5 * x * (1.0 + std::erf(x * inv_sqrt2)));
    }
    auto n = detail::new_node(std::move(out), "gelu");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < s->grad.size(); ++i) {
            const double x = static_cast<double>(an->val[i]);
            const double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
            an->grad[i] += s->grad[i] * static_cast<T>(cdf + x * pdf);
        }
    };
    return Value<T>(n);
}

/// Row-wise softmax, stabilized by the row max.
template <typename T>
Value<T> row_softmax(Value<T> a) {
    const std::size_t R = a.rows(), C = a.cols();
    Tensor<T> out = a.val();
    for (std::size_t r = 0; r < R; ++r) {
        T* row = &out.data[r * C];
        T mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < C; ++c) {
            row[c] = std::exp(row[c] - mx);
            sum += row[c];
        }
        for (std::size_t c = 0; c < C; ++c) row[c] /= sum;
    }
    auto n = detail::new_node(std::move(out), "row_softmax");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r) {
            const T* y = &s->val.data[r * C];
            const T* dy = &s->grad.data[r * C];
            T dot = T(0);
            for (std::size_t c = 0; c < C; ++c) dot += y[c] * dy[c];
            T* dx = &an->grad.data[r * C];
            for (std::size_t c = 0; c < C; ++c) dx[c] += y[c] * (dy[c] - dot);
        }
    };
    return Value<T>(n);
}

/// Row-wise log-sum-exp, stabilized. Returns Rx1.
template <typename T>
Value<T> row_lse(Value<T> a) {
    const std::size_t R = a.rows(), C = a.cols();
    Tensor<T> out = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = &a.val().data[r * C];
        T mx = row[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, row[c]);
        T sum = T(0);
        for (std::size_t c = 0; c < C; ++c) sum += std::exp(row[c] - mx);
        out[r] = mx + std::log(sum);
    }
    auto n = detail::new_node(std::move(out), "row_lse");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r) {
            const T lse = s->val[r];
            const T g = s->grad[r];
            const T* row = &an->val.data[r * C];
            T* dx = &an->grad.data[r * C];
            for (std::size_t c = 0; c < C; ++c) dx[c] += g * std::exp(row[c] - lse);
        }
    };
    return Value<T>(n);
}

/// Per-row sum, returns Rx1.
template <typename T>
Value<T> row_sum(Value<T> a) {
    const std::size_t R = a.rows(), C = a.cols();
    Tensor<T> out = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
        T acc = T(0);
        for (std::size_t c = 0; c < C; ++c) acc += a.val().at(r, c);
        out[r] = acc;
    }
    auto n = detail::new_node(std::move(out), "row_sum");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < C; ++c) an->grad.at(r, c) += s->grad[r];
    };
    return Value<T>(n);
}

template <typename T>
Value<T> sum_all(Value<T> a) {
    T acc = T(0);
    for (T v : a.val().data) acc += v;
    auto n = detail::new_node(Tensor<T>::scalar(acc), "sum_all");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node()]() {
        auto s = self.lock();
        for (std::size_t i = 0; i < an->grad.size(); ++i) an->grad[i] += s->grad[0];
    };
    return Value<T>(n);
}

template <typename T>
Value<T> mean_all(Value<T> a) {
    return scale(sum_all(a), T(1) / static_cast<T>(a.val().size()));
}

/// Rows of `a` selected by index (duplicates allowed). Gradient scatters
/// back with accumulation.
template <typename T>
Value<T> gather_rows(Value<T> a, std::vector<std::size_t> idx) {
    const std::size_t C = a.cols();
    for (std::size_t i : idx) detail::require(i < a.rows(), "gather_rows index out of range");
    Tensor<T> out = Tensor<T>::matrix(idx.size(), C);
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = a.val().at(idx[r], c);
    auto n = detail::new_node(std::move(out), "gather_rows");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), idx = std::move(idx), C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < idx.size(); ++r)
            for (std::size_t c = 0; c < C; ++c) an->grad.at(idx[r], c) += s->grad.at(r, c);
    };
    return Value<T>(n);
}

template <typename T>
Value<T> slice_cols(Value<T> a, std::size_t start, std::size_t len) {
    detail::require(start + len <= a.cols(), "slice_cols out of range");
    const std::size_t R = a.rows();
    Tensor<T> out = Tensor<T>::matrix(R, len);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t c = 0; c < len; ++c) out.at(r, c) = a.val().at(r, start + c);
    auto n = detail::new_node(std::move(out), "slice_cols");
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), start, len, R]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < len; ++c) an->grad.at(r, start + c) += s->grad.at(r, c);
    };
    return Value<T>(n);
}

template <typename T>
Value<T> concat_rows(const std::vector<Value<T>>& parts) {
    detail::require(!parts.empty(), "concat_rows on empty list");
    const std::size_t C = parts[0].cols();
    std::size_t R = 0;
    for (const auto& p : parts) {
        detail::require(p.cols() == C, "concat_rows column mismatch");
        R += p.rows();
    }
    Tensor<T> out = Tensor<T>::matrix(R, C);
    std::size_t off = 0;
    for (const auto& p : parts) {
        std::copy(p.val().data.begin(), p.val().data.end(), out.data.begin() + off * C);
        off += p.rows();
    }
    auto n = detail::new_node(std::move(out), "concat_rows");
    for (const auto& p : parts) n->parents.push_back(p.node());
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self]() {
        auto s = self.lock();
        std::size_t off = 0;
        for (auto& pn : s->parents) {
            for (std::size_t i = 0; i < pn->grad.size(); ++i) pn->grad[i] += s->grad[off + i];
            off += pn->grad.size();
        }
    };
    return Value<T>(n);
}

template <typename T>
Value<T> concat_cols(const std::vector<Value<T>>& parts) {
    detail::require(!parts.empty(), "concat_cols on empty list");
    const std::size_t R = parts[0].rows();
    std::size_t C = 0;
    for (const auto& p : parts) {
        detail::require(p.rows() == R, "concat_cols row mismatch");
        C += p.cols();
    }
    Tensor<T> out = Tensor<T>::matrix(R, C);
    std::size_t off = 0;
    for (const auto& p : parts) {
        for (std::size_t r = 0; r < R; ++r)
            for (std::size_t c = 0; c < p.cols(); ++c) out.at(r, off + c) = p.val().at(r, c);
        off += p.cols();
    }
    auto n = detail::new_node(std::move(out), "concat_cols");
    for (const auto& p : parts) n->parents.push_back(p.node());
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, R]() {
        auto s = self.lock();
        std::size_t off = 0;
        for (auto& pn : s->parents) {
            const std::size_t pc = pn->grad.cols();
            for (std::size_t r = 0; r < R; ++r)
                for (std::size_t c = 0; c < pc; ++c) pn->grad.at(r, c) += s->grad.at(r, off + c);
            off += pc;
        }
    };
    return Value<T>(n);
}

/// Per-row layer normalization with learned gain/shift (both 1xC).
template <typename T>
Value<T> layer_norm(Value<T> x, Value<T> gamma, Value<T> beta, T eps = T(1e-5)) {
    const std::size_t R = x.rows(), C = x.cols();
    detail::require(gamma.rows() == 1 && gamma.cols() == C, "layer_norm gamma shape");
    detail::require(beta.rows() == 1 && beta.cols() == C, "layer_norm beta shape");
    Tensor<T> out = Tensor<T>::matrix(R, C);
    Tensor<T> xhat = Tensor<T>::matrix(R, C);
    Tensor<T> inv_sigma = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
        const T* row = &x.val().data[r * C];
        T mu = T(0);
        for (std::size_t c = 0; c < C; ++c) mu += row[c];
        mu /= static_cast<T>(C);
        T var = T(0);
        for (std::size_t c = 0; c < C; ++c) var += (row[c] - mu) * (row[c] - mu);
        var /= static_cast<T>(C);
        const T is = T(1) / std::sqrt(var + eps);
        inv_sigma[r] = is;
        for (std::size_t c = 0; c < C; ++c) {
            xhat.at(r, c) = (row[c] - mu) * is;
            out.at(r, c) = xhat.at(r, c) * gamma.val()[c] + beta.val()[c];
        }
    }
    auto n = detail::new_node(std::move(out), "layer_norm");
    n->parents = {x.node(), gamma.node(), beta.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, xn = x.node(), gn = gamma.node(), bn = beta.node(), xhat = std::move(xhat),
               inv_sigma = std::move(inv_sigma), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r) {
            const T* dy = &s->grad.data[r * C];
            const T* xh = &xhat.data[r * C];
            T sum_g = T(0), sum_gx = T(0);
            for (std::size_t c = 0; c < C; ++c) {
                const T gy = dy[c] * gn->val[c];
                sum_g += gy;
                sum_gx += gy * xh[c];
            }
            const T invC = T(1) / static_cast<T>(C);
            T* dx = &xn->grad.data[r * C];
            for (std::size_t c = 0; c < C; ++c) {
                const T gy = dy[c] * gn->val[c];
                dx[c] += inv_sigma[r] * (gy - sum_g * invC - xh[c] * sum_gx * invC);
                gn->grad[c] += dy[c] * xh[c];
                bn->grad[c] += dy[c];
            }
        }
    };
    return Value<T>(n);
}

/// Each row scaled to unit Euclidean norm. Zero rows are an error.
template <typename T>
Value<T> l2norm_rows(Value<T> x) {
    const std::size_t R = x.rows(), C = x.cols();
    Tensor<T> out = Tensor<T>::matrix(R, C);
    Tensor<T> inv_norm = Tensor<T>::matrix(R, 1);
    for (std::size_t r = 0; r < R; ++r) {
        T nrm2 = T(0);
        for (std::size_t c = 0; c < C; ++c) nrm2 += x.val().at(r, c) * x.val().at(r, c);
        const T nrm = std::sqrt(nrm2);
        if (!(nrm > T(0))) throw std::runtime_error("l2norm_rows: zero-norm row");
        inv_norm[r] = T(1) / nrm;
        for (std::size_t c = 0; c < C; ++c) out.at(r, c) = x.val().at(r, c) * inv_norm[r];
    }
    auto n = detail::new_node(std::move(out), "l2norm_rows");
    n->parents = {x.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, xn = x.node(), inv_norm = std::move(inv_norm), R, C]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < R; ++r) {
            const T* y = &s->val.data[r * C];
            const T* dy = &s->grad.data[r * C];
            T dot = T(0);
            for (std::size_t c = 0; c < C; ++c) dot += y[c] * dy[c];
            T* dx = &xn->grad.data[r * C];
            for (std::size_t c = 0; c < C; ++c) dx[c] += inv_norm[r] * (dy[c] - y[c] * dot);
        }
    };
    return Value<T>(n);
}

namespace detail {

template <typename T, bool kMax>
Value<T> masked_row_extremum(Value<T> a, const Tensor<T>& mask, const char* opname) {
    const std::size_t R = a.rows(), C = a.cols();
    require(mask.shape == a.val().shape, std::string(opname) + " mask shape mismatch");
    Tensor<T> out = Tensor<T>::matrix(R, 1);
    std::vector<std::size_t> arg(R);
    for (std::size_t r = 0; r < R; ++r) {
        bool found = false;
        T best = T(0);
        std::size_t bi = 0;
        for (std::size_t c = 0; c < C; ++c) {
            if (mask.at(r, c) == T(0)) continue;
            const T v = a.val().at(r, c);
            // first attaining index wins on ties (deterministic)
            if (!found || (kMax ? v > best : v < best)) {
                best = v;
                bi = c;
                found = true;
            }
        }
        require(found, std::string(opname) + ": row with empty mask");
        out[r] = best;
        arg[r] = bi;
    }
    auto n = new_node(std::move(out), opname);
    n->parents = {a.node()};
    std::weak_ptr<GraphNode<T>> self = n;
    n->back = [self, an = a.node(), arg = std::move(arg)]() {
        auto s = self.lock();
        for (std::size_t r = 0; r < arg.size(); ++r) an->grad.at(r, arg[r]) += s->grad[r];
    };
    return Value<T>(n);
}

}  // namespace detail

/// Per-row max over entries where mask != 0 (subgradient routed to the
/// first attaining index). Returns Rx1.
template <typename T>
Value<T> masked_row_max(Value<T> a, const Tensor<T>& mask) {
    return detail::masked_row_extremum<T, true>(a, mask, "masked_row_max");
}

template <typename T>
Value<T> masked_row_min(Value<T> a, const Tensor<T>& mask) {
    return detail::masked_row_extremum<T, false>(a, mask, "masked_row_min");
}

/// Dot product of two 1xC rows as a scalar node.
template <typename T>
Value<T> dot(Value<T> u, Value<T> v) {
    detail::require(u.rows() == 1 && v.rows() == 1 && u.cols() == v.cols(), "dot wants matching rows");
    return sum_all(mul(u, v));
}

/// Cosine similarity of two rows (normalizes both internally).
template <typename T>
Value<T> cosine_similarity(Value<T> u, Value<T> v) {
    return dot(l2norm_rows(u), l2norm_rows(v));
}

/// Run reverse-mode accumulation from a finite scalar output. Trainable
/// parameters reachable from `out` receive their gradients (accumulated;
/// call zero_grads first for fresh values). Unreachable parameters are
/// simply left untouched.
template <typename T>
void backward(Value<T> out) {
    if (!out.val().is_scalar()) {
        throw std::invalid_argument("backward: output is not scalar, shape " + out.val().shape_str());
    }
    if (!std::isfinite(static_cast<double>(out.item()))) {
        throw std::runtime_error("backward: non-finite loss value");
    }

    // iterative post-order DFS
    std::vector<GraphNode<T>*> order;
    std::unordered_set<GraphNode<T>*> seen;
    std::vector<std::pair<GraphNode<T>*, std::size_t>> stack;
    stack.emplace_back(out.node().get(), 0);
    seen.insert(out.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            GraphNode<T>* p = node->parents[next++].get();
            if (seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    out.node()->grad[0] = T(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->back) (*it)->back();
    }
}

template <typename T>
void zero_grads(const std::vector<Parameter<T>*>& params) {
    for (auto* p : params) p->zero_grad();
}

/// Gradient of a scalar graph output w.r.t. the given parameters.
/// Aborts with a diagnostic if any resulting gradient is non-finite.
template <typename T>
void gradients(Value<T> out, const std::vector<Parameter<T>*>& params) {
    zero_grads(params);
    backward(out);
    for (auto* p : params) {
        if (!p->grad.all_finite()) {
            throw std::runtime_error("gradients: non-finite gradient for parameter '" + p->name + "'");
        }
    }
}

}  // namespace svll
