#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace svll {

/// Dense row-major tensor of rank 1..k. Scalars are stored as shape {1}.
/// Values are plain data with no gradient; see Parameter and autograd.hpp
/// for the differentiable layer on top.
template <typename T>
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<T> data;

    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> s, T fill = T(0)) : shape(std::move(s)) {
        data.assign(count(shape), fill);
    }

    Tensor(std::vector<std::size_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (count(shape) != data.size()) {
            throw std::invalid_argument("tensor: shape/data size mismatch");
        }
    }

    static std::size_t count(const std::vector<std::size_t>& s) {
        std::size_t n = 1;
        for (std::size_t e : s) {
            if (e == 0) throw std::invalid_argument("tensor: zero extent");
            n *= e;
        }
        return n;
    }

    static Tensor zeros(std::vector<std::size_t> s) { return Tensor(std::move(s), T(0)); }
    static Tensor full(std::vector<std::size_t> s, T v) { return Tensor(std::move(s), v); }

    static Tensor scalar(T v) {
        Tensor t({1});
        t.data[0] = v;
        return t;
    }

    static Tensor matrix(std::size_t r, std::size_t c) { return Tensor({r, c}); }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }

    std::size_t rows() const {
        require_rank2();
        return shape[0];
    }
    std::size_t cols() const {
        require_rank2();
        return shape[1];
    }

    T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    const T& at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    bool is_scalar() const { return data.size() == 1; }

    T item() const {
        if (!is_scalar()) throw std::runtime_error("tensor: item() on non-scalar");
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }

    /// Reinterpret as a 2-D matrix without touching the flat data.
    Tensor reshaped(std::size_t r, std::size_t c) const {
        if (r * c != data.size()) throw std::invalid_argument("tensor: reshape size mismatch");
        Tensor out;
        out.shape = {r, c};
        out.data = data;
        return out;
    }

    std::string shape_str() const {
        std::ostringstream os;
        os << "[";
        for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
        os << "]";
        return os.str();
    }

   private:
    void require_rank2() const {
        if (shape.size() != 2) throw std::runtime_error("tensor: rank-2 access on " + shape_str());
    }
};

/// Learnable value: tensor plus a gradient slot of the same shape.
/// Frozen parameters keep trainable=false; the optimizer and the backward
/// pass both skip them.
template <typename T>
struct Parameter {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool trainable = true;

    Parameter() = default;
    Parameter(std::string n, Tensor<T> v, bool train = true)
        : name(std::move(n)), value(std::move(v)), grad(value.shape, T(0)), trainable(train) {}

    void zero_grad() { grad.fill(T(0)); }
};

}  // namespace svll
