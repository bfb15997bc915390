#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <set>

#include "oracle_helpers.hpp"
#include "svll/image.hpp"
#include "svll/image_encoder.hpp"
#include "svll/png_io.hpp"

using svll::AugmentedView;
using svll::erase;
using svll::Image;
using svll::ImageEncoder;
using svll::ImageEncoderConfig;
using svll::mean_pixel;
using svll::resize_normalize;
using svll::Rng;

namespace {

Image random_image(std::size_t h, std::size_t w, std::uint64_t seed) {
    Image img(h, w);
    Rng rng(seed);
    // quantized to 1/255 steps like anything that went through a file
    for (auto& v : img.pixels) v = static_cast<float>(rng.index(256)) / 255.0f;
    return img;
}

/// Direct per-pixel bilinear interpolation, written out longhand.
double bilinear_reference(const Image& src, std::size_t th, std::size_t tw, std::size_t y, std::size_t x,
                          std::size_t c) {
    double fy = (y + 0.5) * static_cast<double>(src.height) / th - 0.5;
    double fx = (x + 0.5) * static_cast<double>(src.width) / tw - 0.5;
    if (fy < 0) fy = 0;
    if (fy > src.height - 1.0) fy = src.height - 1.0;
    if (fx < 0) fx = 0;
    if (fx > src.width - 1.0) fx = src.width - 1.0;
    const std::size_t y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1), x1 = std::min(x0 + 1, src.width - 1);
    const double dy = fy - y0, dx = fx - x0;
    return (1 - dy) * (1 - dx) * src.at(y0, x0, c) + (1 - dy) * dx * src.at(y0, x1, c) +
           dy * (1 - dx) * src.at(y1, x0, c) + dy * dx * src.at(y1, x1, c);
}

ImageEncoderConfig micro_cfg() {
    ImageEncoderConfig cfg;
    cfg.height = 8;
    cfg.width = 8;
    cfg.patch = 4;
    cfg.d_model = 8;
    cfg.d_embed = 6;
    cfg.layers = 2;
    cfg.heads = 2;
    cfg.mlp_hidden = 16;
    return cfg;
}

}  // namespace

TEST_CASE("image construction guards extents and range") {
    CHECK_THROWS_AS(Image(0, 4), std::invalid_argument);
    CHECK_THROWS_AS(Image(4, 0), std::invalid_argument);
    Image img(2, 3, 0.5f);
    CHECK(img.pixels.size() == 18);
    CHECK(img.in_range());
    img.at(1, 2, 0) = 1.5f;
    CHECK_FALSE(img.in_range());
}

TEST_CASE("resize to the source extents is a bitwise identity") {
    Image img = random_image(13, 7, 5);
    Image out = resize_normalize(img, 13, 7);
    REQUIRE(out.pixels.size() == img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(out.pixels[i] == img.pixels[i]);
}

TEST_CASE("resize maps constant images to constant images") {
    Image img(9, 5, 0.37f);
    for (auto dims : {std::pair<std::size_t, std::size_t>{4, 11}, {18, 10}, {1, 1}, {64, 32}}) {
        Image out = resize_normalize(img, dims.first, dims.second);
        for (float v : out.pixels) CHECK(v == doctest::Approx(0.37f).epsilon(1e-6));
        CHECK(out.in_range());
    }
}

TEST_CASE("upsampled checkerboard matches the direct bilinear computation") {
    Image img(2, 2);
    // checkerboard: white at (0,0) and (1,1)
    for (std::size_t c = 0; c < 3; ++c) {
        img.at(0, 0, c) = 1.0f;
        img.at(1, 1, c) = 1.0f;
    }
    Image out = resize_normalize(img, 4, 4);
    for (std::size_t y = 0; y < 4; ++y) {
        for (std::size_t x = 0; x < 4; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                CHECK(out.at(y, x, c) == doctest::Approx(bilinear_reference(img, 4, 4, y, x, c)).epsilon(1e-6));
            }
        }
    }
}

TEST_CASE("random resizes agree with the per-pixel oracle and stay in range") {
    Image img = random_image(11, 17, 99);
    for (auto dims : {std::pair<std::size_t, std::size_t>{5, 8}, {23, 31}, {11, 17}, {2, 40}}) {
        Image out = resize_normalize(img, dims.first, dims.second);
        CHECK(out.in_range());
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                for (std::size_t c = 0; c < 3; ++c) {
                    CHECK(out.at(y, x, c) ==
                          doctest::Approx(bilinear_reference(img, dims.first, dims.second, y, x, c)).epsilon(1e-6));
                }
            }
        }
    }
    CHECK_THROWS_AS(resize_normalize(img, 0, 5), std::invalid_argument);
    CHECK_THROWS_AS(resize_normalize(img, 5, 0), std::invalid_argument);
}

TEST_CASE("zero erase fraction returns the image untouched") {
    Image img = random_image(16, 8, 3);
    Rng rng(1);
    AugmentedView v = erase(img, 0.0, rng, {0.5f, 0.5f, 0.5f});
    CHECK(v.rect.empty());
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(v.image.pixels[i] == img.pixels[i]);
    CHECK_THROWS_AS(erase(img, -0.1, rng, {0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(erase(img, 1.0, rng, {0, 0, 0}), std::invalid_argument);
}

TEST_CASE("erased area tracks the requested fraction to one pixel") {
    Rng rng(42);
    const std::array<float, 3> fill{0.2f, 0.4f, 0.6f};
    for (auto geom : {std::pair<std::size_t, std::size_t>{64, 32}, {64, 64}}) {
        Image img = random_image(geom.first, geom.second, 7);
        const double target = geom.first * geom.second / 3.0;
        for (int i = 0; i < 200; ++i) {
            AugmentedView v = erase(img, 1.0 / 3.0, rng, fill);
            CHECK(std::abs(static_cast<double>(v.rect.area()) - std::llround(target)) <= 1.0);
            CHECK(v.rect.top + v.rect.h <= geom.first);
            CHECK(v.rect.left + v.rect.w <= geom.second);
        }
    }
}

TEST_CASE("erase touches exactly the recorded rectangle") {
    Image img = random_image(32, 16, 11);
    Rng rng(8);
    const std::array<float, 3> fill{0.0f, 1.0f, 0.5f};
    AugmentedView v = erase(img, 0.25, rng, fill);
    REQUIRE_FALSE(v.rect.empty());
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const bool inside = y >= v.rect.top && y < v.rect.top + v.rect.h && x >= v.rect.left &&
                                x < v.rect.left + v.rect.w;
            for (std::size_t c = 0; c < 3; ++c) {
                if (inside) {
                    CHECK(v.image.at(y, x, c) == fill[c]);
                } else {
                    CHECK(v.image.at(y, x, c) == img.at(y, x, c));
                }
            }
        }
    }
}

TEST_CASE("two erasings differ only inside the union of their rectangles") {
    Image img = random_image(24, 12, 21);
    Rng rng(33);
    const std::array<float, 3> fill{0.9f, 0.9f, 0.9f};
    AugmentedView a = erase(img, 0.3, rng, fill);
    AugmentedView b = erase(img, 0.3, rng, fill);
    auto inside = [](const svll::EraseRect& r, std::size_t y, std::size_t x) {
        return y >= r.top && y < r.top + r.h && x >= r.left && x < r.left + r.w;
    };
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            if (inside(a.rect, y, x) || inside(b.rect, y, x)) continue;
            for (std::size_t c = 0; c < 3; ++c) CHECK(a.image.at(y, x, c) == b.image.at(y, x, c));
        }
    }
}

TEST_CASE("erase placement is uniform given the drawn rectangle size") {
    const std::size_t H = 16, W = 12;
    Image img(H, W, 0.25f);
    const std::array<float, 3> fill{1.0f, 1.0f, 1.0f};
    Rng rng(1234);
    const int draws = 10000;
    std::vector<double> empirical(H * W, 0.0);
    std::vector<double> expected(H * W, 0.0);
    for (int i = 0; i < draws; ++i) {
        AugmentedView v = erase(img, 0.25, rng, fill);
        REQUIRE(v.rect.area() == 48);  // 0.25 * 192 is exactly achievable
        const std::size_t h = v.rect.h, w = v.rect.w;
        const double n_tops = static_cast<double>(H - h + 1);
        const double n_lefts = static_cast<double>(W - w + 1);
        for (std::size_t y = 0; y < H; ++y) {
            // count of top offsets whose rectangle covers row y
            const double cover_y = static_cast<double>(std::min(y, H - h) -
                                                       std::max<long>(0, static_cast<long>(y) - h + 1) + 1);
            for (std::size_t x = 0; x < W; ++x) {
                const double cover_x = static_cast<double>(
                    std::min(x, W - w) - std::max<long>(0, static_cast<long>(x) - w + 1) + 1);
                expected[y * W + x] += (cover_y / n_tops) * (cover_x / n_lefts);
                if (v.image.at(y, x, 0) == 1.0f) empirical[y * W + x] += 1.0;
            }
        }
    }
    for (std::size_t i = 0; i < H * W; ++i) {
        CHECK(std::abs(empirical[i] - expected[i]) / draws <= 0.03);
    }
}

TEST_CASE("mean pixel averages channels over every image") {
    Image a(1, 2);  // pixels (0.0 .. 0.5) per channel pattern
    for (std::size_t c = 0; c < 3; ++c) {
        a.at(0, 0, c) = 0.0f;
        a.at(0, 1, c) = 0.5f;
    }
    Image b(1, 1);
    for (std::size_t c = 0; c < 3; ++c) b.at(0, 0, c) = 1.0f;
    auto m = mean_pixel({a, b});
    for (std::size_t c = 0; c < 3; ++c) CHECK(m[c] == doctest::Approx(0.5f));
    CHECK_THROWS_AS(mean_pixel({}), std::invalid_argument);
}

TEST_CASE("png files round-trip quantized images exactly") {
    Image img = random_image(20, 14, 77);
    const std::string path = "roundtrip_test.png";
    svll::write_png(img, path);
    Image back = svll::read_png(path);
    REQUIRE(back.height == img.height);
    REQUIRE(back.width == img.width);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) CHECK(back.pixels[i] == img.pixels[i]);
    std::remove(path.c_str());
    CHECK_THROWS(svll::read_png(path));
}

TEST_CASE("patchify lays out pixels grid-major then y, x, channel") {
    ImageEncoderConfig cfg;
    cfg.height = 4;
    cfg.width = 4;
    cfg.patch = 2;
    cfg.d_model = 4;
    cfg.d_embed = 4;
    cfg.layers = 1;
    cfg.heads = 1;
    Rng rng(1);
    ImageEncoder<float> enc(cfg, rng);
    Image img(4, 4);
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < 4; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>((y * 4 + x) * 3 + c) / 64.0f;
    auto patches = enc.patchify(img);
    REQUIRE(patches.rows() == 4);
    REQUIRE(patches.cols() == 12);
    // patch 1 of the grid covers columns 2..3 of rows 0..1
    CHECK(patches.at(1, 0) == img.at(0, 2, 0));
    CHECK(patches.at(1, 5) == img.at(0, 3, 2));
    CHECK(patches.at(1, 6) == img.at(1, 2, 0));
    CHECK(patches.at(1, 11) == img.at(1, 3, 2));
    // patch 2 starts at row 2
    CHECK(patches.at(2, 0) == img.at(2, 0, 0));

    Image wrong(6, 4);
    CHECK_THROWS_AS(enc.patchify(wrong), std::invalid_argument);
    ImageEncoderConfig bad = cfg;
    bad.height = 5;
    CHECK_THROWS_AS(ImageEncoder<float>(bad, rng), std::invalid_argument);
}

TEST_CASE("image features are unit norm, deterministic and input-sensitive") {
    Rng rng(31);
    ImageEncoder<float> enc(micro_cfg(), rng);
    Image a = random_image(8, 8, 1);
    Image b = random_image(8, 8, 2);
    auto ea = enc.encode(a);
    auto ea2 = enc.encode(a);
    auto eb = enc.encode(b);
    CHECK(ea.rows() == 1);
    CHECK(ea.cols() == 6);
    double n = 0;
    for (std::size_t c = 0; c < 6; ++c) n += double(ea.val()[c]) * ea.val()[c];
    CHECK(std::sqrt(n) == doctest::Approx(1.0).epsilon(1e-6));
    bool identical = true, differs = false;
    for (std::size_t c = 0; c < 6; ++c) {
        if (ea.val()[c] != ea2.val()[c]) identical = false;
        if (ea.val()[c] != eb.val()[c]) differs = true;
    }
    CHECK(identical);
    CHECK(differs);
}

TEST_CASE("feature gradient w.r.t. the patch projection matches finite differences") {
    using T = double;
    Rng rng(71);
    ImageEncoder<T> enc(micro_cfg(), rng);
    Image img = random_image(8, 8, 17);

    Rng wrng(4);
    std::vector<double> w(6);
    for (auto& x : w) x = wrng.normal();

    auto params = enc.params();
    svll::Parameter<T>* proj = params[0];
    REQUIRE(proj->name == "image.patch_proj");

    auto eval = [&](const std::vector<double>& flat) {
        for (std::size_t i = 0; i < flat.size(); ++i) proj->value[i] = flat[i];
        auto e = enc.encode(img);
        double s = 0;
        for (std::size_t c = 0; c < 6; ++c) s += w[c] * e.val()[c];
        return s;
    };

    std::vector<double> x0(proj->value.data);
    {
        auto e = enc.encode(img);
        auto probe = svll::constant(svll::Tensor<T>({1, 6}, std::vector<T>(w.begin(), w.end())));
        auto loss = svll::sum_all(svll::mul(e, probe));
        svll::gradients(loss, {proj});
    }
    std::vector<double> analytic(proj->grad.data);
    auto fd = oracle::fd_gradient(eval, x0, 1e-5);
    auto rep = oracle::compare_gradients(analytic, fd);
    CHECK(rep.max_rel_err <= 1e-4);
}

TEST_CASE("frozen image encoders accumulate no gradient") {
    using T = double;
    Rng rng(5);
    ImageEncoder<T> enc(micro_cfg(), rng, /*trainable=*/true);
    enc.set_trainable(false);
    Image img = random_image(8, 8, 9);
    auto loss = svll::sum_all(enc.encode(img));
    svll::gradients(loss, enc.params());
    for (auto* p : enc.params()) {
        for (std::size_t i = 0; i < p->grad.size(); ++i) CHECK(p->grad[i] == 0.0);
    }
}
