#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "svll/prompt.hpp"
#include "svll/transformer.hpp"

namespace svll {

struct TextEncoderConfig {
    std::size_t vocab_size = 0;
    std::size_t d_word = 32;   // token-embedding width
    std::size_t d_embed = 32;  // output feature width
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t context = 16;
    std::size_t mlp_hidden = 0;  // 0 -> 4 * d_word

    std::size_t hidden() const { return mlp_hidden ? mlp_hidden : 4 * d_word; }
};

/// Tiny text transformer: fixed word-embedding table, learned positions,
/// pre-LN blocks, pooling at <eos>, linear projection, L2 normalization.
/// Constructed frozen: in this pipeline the text side is never fine-tuned,
/// only the prompt bank upstream of it trains.
template <typename T>
class TextEncoder {
   public:
    TextEncoder() = default;

    TextEncoder(TextEncoderConfig cfg, Rng& rng) : cfg_(cfg) {
        if (cfg_.vocab_size == 0) throw std::invalid_argument("text encoder: vocab_size not set");
        auto randn = [&](std::vector<std::size_t> shape, T stddev) {
            Tensor<T> t(std::move(shape));
            for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
            return t;
        };
        const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.d_word)));
        word_table_ = Parameter<T>("text.word_table", randn({cfg_.vocab_size, cfg_.d_word}, sd), false);
        pos_ = Parameter<T>("text.pos", randn({cfg_.context, cfg_.d_word}, sd / 2), false);
        blocks_.resize(cfg_.layers);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            blocks_[l].init("text.block" + std::to_string(l), cfg_.d_word, cfg_.hidden(), cfg_.heads, rng,
                            false);
        }
        lnf_g_ = Parameter<T>("text.lnf.g", Tensor<T>({1, cfg_.d_word}, T(1)), false);
        lnf_b_ = Parameter<T>("text.lnf.b", Tensor<T>({1, cfg_.d_word}, T(0)), false);
        proj_ = Parameter<T>("text.proj", randn({cfg_.d_word, cfg_.d_embed}, sd), false);
    }

    const TextEncoderConfig& config() const { return cfg_; }

    /// Embedding table as a vocab_size x d_word graph view.
    Value<T> word_table() { return leaf(word_table_); }

    /// Encode one embedded prompt to a unit-norm 1 x d_embed feature.
    Value<T> encode(const EmbeddedPrompt<T>& p) {
        const std::size_t len = p.seq.rows();
        if (len > cfg_.context) {
            throw std::length_error("text encoder: prompt length " + std::to_string(len) +
                                    " exceeds context " + std::to_string(cfg_.context));
        }
        std::vector<std::size_t> positions(len);
        std::iota(positions.begin(), positions.end(), std::size_t(0));
        auto x = add(p.seq, gather_rows(leaf(pos_), std::move(positions)));
        for (auto& b : blocks_) x = b.forward(x);
        x = layer_norm(x, leaf(lnf_g_), leaf(lnf_b_));
        auto pooled = gather_rows(x, {p.eos_pos});
        return l2norm_rows(matmul(pooled, leaf(proj_)));
    }

    /// All parameters in fixed construction order (digests, checkpoints).
    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out{&word_table_, &pos_};
        for (auto& b : blocks_) b.collect(out);
        out.push_back(&lnf_g_);
        out.push_back(&lnf_b_);
        out.push_back(&proj_);
        return out;
    }

    void set_trainable(bool tr) {
        for (auto* p : params()) p->trainable = tr;
    }

   private:
    TextEncoderConfig cfg_;
    Parameter<T> word_table_, pos_;
    std::vector<TransformerBlock<T>> blocks_;
    Parameter<T> lnf_g_, lnf_b_, proj_;
};

}  // namespace svll
