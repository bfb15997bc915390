#include "svll/image.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace svll {

Image::Image(std::size_t h, std::size_t w, float fill) : height(h), width(w) {
    if (h == 0 || w == 0) throw std::invalid_argument("image: zero extent");
    pixels.assign(h * w * 3, fill);
}

bool Image::in_range() const {
    for (float v : pixels) {
        if (!(v >= 0.0f && v <= 1.0f)) return false;
    }
    return true;
}

Image resize_normalize(const Image& img, std::size_t target_h, std::size_t target_w) {
    if (target_h == 0 || target_w == 0) throw std::invalid_argument("resize: zero target extent");
    Image out(target_h, target_w);
    const double sy = static_cast<double>(img.height) / static_cast<double>(target_h);
    const double sx = static_cast<double>(img.width) / static_cast<double>(target_w);
    for (std::size_t y = 0; y < target_h; ++y) {
        double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
        fy = std::clamp(fy, 0.0, static_cast<double>(img.height - 1));
        const std::size_t y0 = static_cast<std::size_t>(fy);
        const std::size_t y1 = std::min(y0 + 1, img.height - 1);
        const double wy = fy - static_cast<double>(y0);
        for (std::size_t x = 0; x < target_w; ++x) {
            double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
            fx = std::clamp(fx, 0.0, static_cast<double>(img.width - 1));
            const std::size_t x0 = static_cast<std::size_t>(fx);
            const std::size_t x1 = std::min(x0 + 1, img.width - 1);
            const double wx = fx - static_cast<double>(x0);
            for (std::size_t c = 0; c < 3; ++c) {
                const double top = (1.0 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c);
                const double bot = (1.0 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c);
                out.at(y, x, c) = static_cast<float>((1.0 - wy) * top + wy * bot);
            }
        }
    }
    return out;
}

namespace {

/// Rectangle extents minimizing |h*w - area| over everything that fits,
/// then |h - h_target|, then smaller h. Exhaustive and deterministic.
EraseRect best_rect(std::size_t H, std::size_t W, std::size_t area, double h_target) {
    EraseRect best;
    long best_area_err = std::numeric_limits<long>::max();
    double best_h_err = 0.0;
    for (std::size_t h = 1; h <= H; ++h) {
        for (std::size_t w = 1; w <= W; ++w) {
            const long area_err = std::labs(static_cast<long>(h * w) - static_cast<long>(area));
            const double h_err = std::abs(static_cast<double>(h) - h_target);
            if (area_err < best_area_err ||
                (area_err == best_area_err && h_err < best_h_err)) {
                best_area_err = area_err;
                best_h_err = h_err;
                best.h = h;
                best.w = w;
            }
        }
    }
    return best;
}

}  // namespace

AugmentedView erase(const Image& img, double beta, Rng& rng, const std::array<float, 3>& fill) {
    if (beta < 0.0 || beta >= 1.0) throw std::invalid_argument("erase: beta outside [0,1)");
    AugmentedView view;
    view.image = img;
    const std::size_t H = img.height, W = img.width;
    const std::size_t area = static_cast<std::size_t>(std::llround(beta * static_cast<double>(H * W)));
    if (area == 0) return view;  // bitwise identity, empty rect

    const double aspect = rng.uniform(0.5, 2.0);  // h : w
    const double h_target = std::sqrt(static_cast<double>(area) * aspect);
    EraseRect rect = best_rect(H, W, area, h_target);
    rect.top = rng.index(H - rect.h + 1);
    rect.left = rng.index(W - rect.w + 1);

    for (std::size_t y = rect.top; y < rect.top + rect.h; ++y) {
        for (std::size_t x = rect.left; x < rect.left + rect.w; ++x) {
            for (std::size_t c = 0; c < 3; ++c) view.image.at(y, x, c) = fill[c];
        }
    }
    view.rect = rect;
    return view;
}

std::array<float, 3> mean_pixel(const std::vector<Image>& images) {
    std::array<double, 3> acc{0, 0, 0};
    std::size_t n = 0;
    for (const auto& img : images) {
        for (std::size_t i = 0; i < img.pixels.size(); i += 3) {
            acc[0] += img.pixels[i];
            acc[1] += img.pixels[i + 1];
            acc[2] += img.pixels[i + 2];
        }
        n += img.height * img.width;
    }
    if (n == 0) throw std::invalid_argument("mean_pixel: no images");
    return {static_cast<float>(acc[0] / n), static_cast<float>(acc[1] / n), static_cast<float>(acc[2] / n)};
}

}  // namespace svll
