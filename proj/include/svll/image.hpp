#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "svll/rng.hpp"

namespace svll {

/// Interleaved RGB raster, float values in [0,1], row-major.
struct Image {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<float> pixels;  // height * width * 3, HWC order

    Image() = default;
    Image(std::size_t h, std::size_t w, float fill = 0.0f);

    float& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
    const float& at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * 3 + c];
    }

    bool in_range() const;
};

struct EraseRect {
    std::size_t top = 0, left = 0, h = 0, w = 0;
    std::size_t area() const { return h * w; }
    bool empty() const { return h == 0 || w == 0; }
};

/// An image with the record of the rectangle that was blanked out of it.
struct AugmentedView {
    Image image;
    EraseRect rect;
};

/// Bilinear resize with half-pixel sample centers; an identity when the
/// target equals the source extents.
Image resize_normalize(const Image& img, std::size_t target_h, std::size_t target_w);

/// Blank one axis-aligned rectangle of area round(beta*H*W) (exact up to
/// one-pixel quantization whenever such a rectangle fits), aspect ratio
/// drawn uniformly in [0.5, 2], placed uniformly, filled with `fill`
/// (normally the dataset mean pixel). beta = 0 erases nothing.
AugmentedView erase(const Image& img, double beta, Rng& rng, const std::array<float, 3>& fill);

/// Channel means over a set of images (the erase fill value).
std::array<float, 3> mean_pixel(const std::vector<Image>& images);

}  // namespace svll
