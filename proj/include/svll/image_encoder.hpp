#pragma once

#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "svll/image.hpp"
#include "svll/transformer.hpp"

namespace svll {

struct ImageEncoderConfig {
    std::size_t height = 64;
    std::size_t width = 32;
    std::size_t patch = 8;
    std::size_t d_model = 32;  // token width inside the transformer
    std::size_t d_embed = 32;  // output feature width
    std::size_t layers = 2;
    std::size_t heads = 2;
    std::size_t mlp_hidden = 0;  // 0 -> 4 * d_model

    std::size_t patches() const { return (height / patch) * (width / patch); }
    std::size_t patch_dim() const { return patch * patch * 3; }
    std::size_t hidden() const { return mlp_hidden ? mlp_hidden : 4 * d_model; }
};

/// Tiny patch transformer: non-overlapping patch embedding, class token,
/// learned positions, pre-LN blocks, class-token pooling, projection,
/// L2 normalization. The only encoder that is ever fine-tuned.
template <typename T>
class ImageEncoder {
   public:
    ImageEncoder() = default;

    ImageEncoder(ImageEncoderConfig cfg, Rng& rng, bool trainable = true) : cfg_(cfg) {
        if (cfg_.patch == 0 || cfg_.height % cfg_.patch != 0 || cfg_.width % cfg_.patch != 0) {
            throw std::invalid_argument("image encoder: extents must be divisible by patch size");
        }
        auto randn = [&](std::vector<std::size_t> shape, T stddev) {
            Tensor<T> t(std::move(shape));
            for (auto& v : t.data) v = static_cast<T>(rng.normal()) * stddev;
            return t;
        };
        const T sd = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.d_model)));
        const T sd_patch = static_cast<T>(1.0 / std::sqrt(static_cast<double>(cfg_.patch_dim())));
        patch_proj_ = Parameter<T>("image.patch_proj", randn({cfg_.patch_dim(), cfg_.d_model}, sd_patch), trainable);
        patch_bias_ = Parameter<T>("image.patch_bias", Tensor<T>({1, cfg_.d_model}, T(0)), trainable);
        cls_ = Parameter<T>("image.cls", randn({1, cfg_.d_model}, sd), trainable);
        pos_ = Parameter<T>("image.pos", randn({1 + cfg_.patches(), cfg_.d_model}, sd / 2), trainable);
        blocks_.resize(cfg_.layers);
        for (std::size_t l = 0; l < cfg_.layers; ++l) {
            blocks_[l].init("image.block" + std::to_string(l), cfg_.d_model, cfg_.hidden(), cfg_.heads, rng,
                            trainable);
        }
        lnf_g_ = Parameter<T>("image.lnf.g", Tensor<T>({1, cfg_.d_model}, T(1)), trainable);
        lnf_b_ = Parameter<T>("image.lnf.b", Tensor<T>({1, cfg_.d_model}, T(0)), trainable);
        proj_ = Parameter<T>("image.proj", randn({cfg_.d_model, cfg_.d_embed}, sd), trainable);
    }

    const ImageEncoderConfig& config() const { return cfg_; }

    /// Patch-grid rows (row-major over the grid), each holding one patch's
    /// pixels in y, x, channel order.
    Tensor<T> patchify(const Image& img) const {
        if (img.height != cfg_.height || img.width != cfg_.width) {
            throw std::invalid_argument("image encoder: got " + std::to_string(img.height) + "x" +
                                        std::to_string(img.width) + ", expected " +
                                        std::to_string(cfg_.height) + "x" + std::to_string(cfg_.width));
        }
        const std::size_t P = cfg_.patch;
        const std::size_t gh = cfg_.height / P, gw = cfg_.width / P;
        Tensor<T> out = Tensor<T>::matrix(gh * gw, cfg_.patch_dim());
        for (std::size_t py = 0; py < gh; ++py) {
            for (std::size_t px = 0; px < gw; ++px) {
                T* row = &out.data[(py * gw + px) * cfg_.patch_dim()];
                std::size_t i = 0;
                for (std::size_t y = 0; y < P; ++y) {
                    for (std::size_t x = 0; x < P; ++x) {
                        for (std::size_t c = 0; c < 3; ++c) {
                            row[i++] = static_cast<T>(img.at(py * P + y, px * P + x, c));
                        }
                    }
                }
            }
        }
        return out;
    }

    /// Encode one image to a unit-norm 1 x d_embed feature.
    Value<T> encode(const Image& img) { return encode_patches(patchify(img)); }

    /// Same path with the patch matrix supplied directly (tests, caching).
    Value<T> encode_patches(Tensor<T> patches) {
        if (patches.rows() != cfg_.patches() || patches.cols() != cfg_.patch_dim()) {
            throw std::invalid_argument("image encoder: patch matrix shape mismatch");
        }
        auto tokens = add_bias(matmul(constant(std::move(patches), "patches"), leaf(patch_proj_)),
                               leaf(patch_bias_));
        auto x = concat_rows<T>({leaf(cls_), tokens});
        x = add(x, leaf(pos_));
        for (auto& b : blocks_) x = b.forward(x);
        x = layer_norm(x, leaf(lnf_g_), leaf(lnf_b_));
        auto pooled = gather_rows(x, {std::size_t(0)});
        return l2norm_rows(matmul(pooled, leaf(proj_)));
    }

    /// All parameters in fixed construction order (digests, checkpoints).
    std::vector<Parameter<T>*> params() {
        std::vector<Parameter<T>*> out{&patch_proj_, &patch_bias_, &cls_, &pos_};
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
    ImageEncoderConfig cfg_;
    Parameter<T> patch_proj_, patch_bias_, cls_, pos_;
    std::vector<TransformerBlock<T>> blocks_;
    Parameter<T> lnf_g_, lnf_b_, proj_;
};

}  // namespace svll
