#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "svll/autograd.hpp"
#include "svll/rng.hpp"

namespace svll {

/// One pre-LN transformer block: x + attn(ln(x)), then x + mlp(ln(x)).
/// Multi-head self-attention over the full sequence (no causal mask) with
/// a GELU feed-forward. Shared by the text and image encoders.
template <typename T>
struct TransformerBlock {
    Parameter<T> ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo;
    Parameter<T> ln2_g, ln2_b, w1, b1, w2, b2;
    std::size_t heads = 1;
    std::size_t dim = 0;
    std::size_t hidden = 0;

    void init(const std::string& prefix, std::size_t d, std::size_t mlp_hidden, std::size_t n_heads, Rng& rng,
              bool trainable) {
        if (d % n_heads != 0) throw std::invalid_argument("transformer: heads must divide width");
        heads = n_heads;
        dim = d;
        hidden = mlp_hidden;
        auto ones = [](std::size_t c) { return Tensor<T>({1, c}, T(1)); };
        auto zeros = [](std::size_t r, std::size_t c) { return Tensor<T>({r, c}, T(0)); };
        // fan-in scaling keeps activations O(1) at any width; a fixed small
        // stddev starves narrow models of input sensitivity
        auto randn = [&](std::size_t r, std::size_t c) {
            const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(r)));
            Tensor<T> t({r, c});
            for (auto& v : t.data) v = static_cast<T>(rng.normal()) * sd;
            return t;
        };
        ln1_g = Parameter<T>(prefix + ".ln1.g", ones(d), trainable);
        ln1_b = Parameter<T>(prefix + ".ln1.b", zeros(1, d), trainable);
        wq = Parameter<T>(prefix + ".attn.wq", randn(d, d), trainable);
        bq = Parameter<T>(prefix + ".attn.bq", zeros(1, d), trainable);
        wk = Parameter<T>(prefix + ".attn.wk", randn(d, d), trainable);
        bk = Parameter<T>(prefix + ".attn.bk", zeros(1, d), trainable);
        wv = Parameter<T>(prefix + ".attn.wv", randn(d, d), trainable);
        bv = Parameter<T>(prefix + ".attn.bv", zeros(1, d), trainable);
        wo = Parameter<T>(prefix + ".attn.wo", randn(d, d), trainable);
        bo = Parameter<T>(prefix + ".attn.bo", zeros(1, d), trainable);
        ln2_g = Parameter<T>(prefix + ".ln2.g", ones(d), trainable);
        ln2_b = Parameter<T>(prefix + ".ln2.b", zeros(1, d), trainable);
        w1 = Parameter<T>(prefix + ".mlp.w1", randn(d, mlp_hidden), trainable);
        b1 = Parameter<T>(prefix + ".mlp.b1", zeros(1, mlp_hidden), trainable);
        w2 = Parameter<T>(prefix + ".mlp.w2", randn(mlp_hidden, d), trainable);
        b2 = Parameter<T>(prefix + ".mlp.b2", zeros(1, d), trainable);
    }

    Value<T> forward(Value<T> x) {
        const std::size_t hd = dim / heads;
        auto h = layer_norm(x, leaf(ln1_g), leaf(ln1_b));
        auto q = add_bias(matmul(h, leaf(wq)), leaf(bq));
        auto k = add_bias(matmul(h, leaf(wk)), leaf(bk));
        auto v = add_bias(matmul(h, leaf(wv)), leaf(bv));
        const T inv_sqrt_hd = T(1) / static_cast<T>(std::sqrt(static_cast<double>(hd)));
        std::vector<Value<T>> per_head;
        per_head.reserve(heads);
        for (std::size_t i = 0; i < heads; ++i) {
            auto qh = slice_cols(q, i * hd, hd);
            auto kh = slice_cols(k, i * hd, hd);
            auto vh = slice_cols(v, i * hd, hd);
            auto att = row_softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_hd));
            per_head.push_back(matmul(att, vh));
        }
        auto o = heads == 1 ? per_head[0] : concat_cols(per_head);
        x = add(x, add_bias(matmul(o, leaf(wo)), leaf(bo)));
        auto h2 = layer_norm(x, leaf(ln2_g), leaf(ln2_b));
        auto f = gelu(add_bias(matmul(h2, leaf(w1)), leaf(b1)));
        f = add_bias(matmul(f, leaf(w2)), leaf(b2));
        return add(x, f);
    }

    void collect(std::vector<Parameter<T>*>& out) {
        for (Parameter<T>* p : {&ln1_g, &ln1_b, &wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo, &ln2_g, &ln2_b, &w1,
                                &b1, &w2, &b2}) {
            out.push_back(p);
        }
    }

    void set_trainable(bool tr) {
        std::vector<Parameter<T>*> ps;
        collect(ps);
        for (auto* p : ps) p->trainable = tr;
    }
};

}  // namespace svll
