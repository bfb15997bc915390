#include "svll/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include "json.hpp"
#include "svll/log.hpp"
#include "svll/png_io.hpp"

namespace fs = std::filesystem;

namespace svll {

const char* split_name(Split s) {
    switch (s) {
        case Split::train: return "train";
        case Split::query: return "query";
        case Split::gallery: return "gallery";
    }
    throw std::logic_error("split_name: bad enum value");
}

Split split_from_name(const std::string& name) {
    if (name == "train") return Split::train;
    if (name == "query") return Split::query;
    if (name == "gallery") return Split::gallery;
    throw std::runtime_error("unknown split name: " + name);
}

std::vector<std::size_t> DatasetManifest::indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == s) out.push_back(i);
    return out;
}

std::size_t DatasetManifest::count(Split s) const {
    std::size_t n = 0;
    for (const auto& smp : samples)
        if (smp.split == s) ++n;
    return n;
}

std::vector<std::size_t> DatasetManifest::train_of(int id) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples.size(); ++i)
        if (samples[i].split == Split::train && samples[i].id == id) out.push_back(i);
    return out;
}

void DatasetManifest::validate() const {
    std::vector<char> seen(n_identities, 0);
    for (const auto& s : samples) {
        if (s.id < 0 || s.cam < 0) throw std::runtime_error("manifest: negative id or camera");
        if (s.split == Split::train) {
            if (static_cast<std::size_t>(s.id) >= n_identities)
                throw std::runtime_error("manifest: train id outside the contiguous label range");
            seen[static_cast<std::size_t>(s.id)] = 1;
        }
    }
    for (std::size_t i = 0; i < n_identities; ++i)
        if (!seen[i]) throw std::runtime_error("manifest: train identities are not contiguous");
    if (count(Split::query) > 0 && count(Split::gallery) == 0)
        throw std::runtime_error("manifest: query split without a gallery");
    if (!images.empty() && images.size() != samples.size())
        throw std::runtime_error("manifest: image count does not match sample count");
}

// ---------------------------------------------------------------------------
// synthetic generation

namespace {

struct IdentityLatent {
    float torso[3], legs[3], accent[3], badge[3];
    int pattern;  // 0 plain, 1 horizontal stripes, 2 vertical, 3 checker
    double period;
    double badge_u, badge_v;
};

IdentityLatent draw_latent(std::uint64_t seed, std::size_t id) {
    Rng rng = Rng::substream(seed, 11, id);
    IdentityLatent lat{};
    auto color = [&rng](float* c) {
        for (int i = 0; i < 3; ++i) c[i] = static_cast<float>(rng.uniform(0.10, 0.90));
    };
    color(lat.torso);
    color(lat.legs);
    color(lat.accent);
    color(lat.badge);
    lat.pattern = static_cast<int>(rng.index(4));
    lat.period = rng.uniform(0.10, 0.22);
    lat.badge_u = rng.uniform(0.32, 0.68);
    lat.badge_v = rng.uniform(0.34, 0.66);
    return lat;
}

void fill_rect(Image& img, std::size_t top, std::size_t left, std::size_t h, std::size_t w,
               const float* color) {
    const std::size_t y1 = std::min(img.height, top + h);
    const std::size_t x1 = std::min(img.width, left + w);
    for (std::size_t y = top; y < y1; ++y)
        for (std::size_t x = left; x < x1; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = color[c];
}

void paint_clutter(Image& img, double strength, Rng& rng) {
    const int n = static_cast<int>(std::lround(strength * 6.0));
    for (int r = 0; r < n; ++r) {
        const std::size_t h = 1 + rng.index(std::max<std::size_t>(1, img.height / 4));
        const std::size_t w = 1 + rng.index(std::max<std::size_t>(1, img.width / 4));
        const std::size_t top = rng.index(img.height - h + 1);
        const std::size_t left = rng.index(img.width - w + 1);
        float color[3];
        for (int c = 0; c < 3; ++c) {
            const double v = 0.82 + strength * rng.uniform(-0.35, 0.35);
            color[c] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
        fill_rect(img, top, left, h, w, color);
    }
}

void paint_figure(Image& img, const IdentityLatent& lat) {
    static const float skin[3] = {0.85f, 0.72f, 0.58f};
    for (std::size_t y = 0; y < img.height; ++y) {
        const double v = (static_cast<double>(y) + 0.5) / static_cast<double>(img.height);
        for (std::size_t x = 0; x < img.width; ++x) {
            const double u = (static_cast<double>(x) + 0.5) / static_cast<double>(img.width);
            const float* c = nullptr;
            if (v >= 0.08 && v < 0.26 && std::abs(u - 0.5) < 0.14) {
                c = skin;
            } else if (v >= 0.28 && v < 0.72 && std::abs(u - 0.5) < 0.26) {
                c = lat.torso;
                const int band_u = static_cast<int>(std::floor(u / lat.period));
                const int band_v = static_cast<int>(std::floor(v / lat.period));
                bool accent = false;
                if (lat.pattern == 1) accent = band_v % 2 == 0;
                if (lat.pattern == 2) accent = band_u % 2 == 0;
                if (lat.pattern == 3) accent = (band_u + band_v) % 2 == 0;
                if (accent) c = lat.accent;
                if (std::abs(u - lat.badge_u) < 0.06 && std::abs(v - lat.badge_v) < 0.045)
                    c = lat.badge;
            } else if (v >= 0.74 && v < 0.96 &&
                       ((u >= 0.28 && u < 0.46) || (u >= 0.54 && u < 0.72))) {
                c = lat.legs;
            }
            if (c != nullptr)
                for (std::size_t ch = 0; ch < 3; ++ch) img.at(y, x, ch) = c[ch];
        }
    }
}

void maybe_occlude(Image& img, double prob, Rng& rng) {
    const double roll = rng.uniform();
    if (roll >= prob) return;
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform(0.15, 0.75));
    const double hf = rng.uniform(0.25, 0.50);
    const double wf = rng.uniform(0.35, 0.75);
    std::size_t h = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(hf * static_cast<double>(img.height))));
    std::size_t w = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(wf * static_cast<double>(img.width))));
    h = std::min(h, img.height);
    w = std::min(w, img.width);
    const std::size_t top = rng.index(img.height - h + 1);
    const std::size_t left = rng.index(img.width - w + 1);
    fill_rect(img, top, left, h, w, color);
}

void apply_illumination(Image& img, double factor) {
    if (factor == 1.0) return;
    for (float& p : img.pixels)
        p = static_cast<float>(std::clamp(static_cast<double>(p) * factor, 0.0, 1.0));
}

void quantize_pixels(Image& img) {
    for (float& p : img.pixels) {
        const long k = std::lround(std::clamp(static_cast<double>(p), 0.0, 1.0) * 255.0);
        p = static_cast<float>(k) / 255.0f;
    }
}

Image make_image(const SyntheticSpec& spec, const IdentityLatent& lat, double cam_shift,
                 std::uint64_t counter) {
    Rng rng = Rng::substream(spec.seed, 13, counter);
    Image img(spec.height, spec.width, 0.82f);
    paint_clutter(img, spec.clutter, rng);
    paint_figure(img, lat);
    maybe_occlude(img, spec.occlusion, rng);
    const double jitter = rng.uniform(-0.15, 0.15);
    if (spec.illumination != 0.0) {
        const double factor =
            (1.0 + spec.illumination * cam_shift) * (1.0 + spec.illumination * jitter);
        apply_illumination(img, factor);
    }
    quantize_pixels(img);
    return img;
}

void check_spec(const SyntheticSpec& spec) {
    if (spec.n_identities == 0) throw std::invalid_argument("synthetic: need at least one identity");
    if (spec.train_per_id == 0) throw std::invalid_argument("synthetic: need train images per identity");
    if (spec.query_per_id > 0 && spec.gallery_per_id == 0)
        throw std::invalid_argument("synthetic: query images without a gallery");
    if (spec.cameras == 0) throw std::invalid_argument("synthetic: need at least one camera");
    if (spec.height < 8 || spec.width < 8)
        throw std::invalid_argument("synthetic: extents below 8 pixels");
    for (double s : {spec.clutter, spec.illumination, spec.occlusion})
        if (!(s >= 0.0 && s <= 1.0))
            throw std::invalid_argument("synthetic: nuisance strengths must lie in [0,1]");
}

}  // namespace

DatasetManifest generate_synthetic(const SyntheticSpec& spec) {
    check_spec(spec);
    std::vector<double> cam_shift(spec.cameras);
    for (std::size_t c = 0; c < spec.cameras; ++c)
        cam_shift[c] = Rng::substream(spec.seed, 12, c).uniform(-0.4, 0.4);

    DatasetManifest m;
    m.n_identities = spec.n_identities;
    std::uint64_t counter = 0;
    const std::pair<Split, std::size_t> plan[] = {{Split::train, spec.train_per_id},
                                                  {Split::query, spec.query_per_id},
                                                  {Split::gallery, spec.gallery_per_id}};
    for (std::size_t id = 0; id < spec.n_identities; ++id) {
        const IdentityLatent lat = draw_latent(spec.seed, id);
        for (const auto& [split, per_id] : plan) {
            for (std::size_t i = 0; i < per_id; ++i) {
                const std::size_t cam = i % spec.cameras;
                ReIDSample s;
                s.id = static_cast<int>(id);
                s.cam = static_cast<int>(cam);
                s.split = split;
                m.samples.push_back(s);
                m.images.push_back(make_image(spec, lat, cam_shift[cam], counter++));
            }
        }
    }
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// directory ingestion

namespace {

bool all_digits(const std::string& s, std::size_t from, std::size_t to) {
    if (from >= to) return false;
    for (std::size_t i = from; i < to; ++i)
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    return true;
}

// "<id>_c<cam>s<seq>_<frame>_<idx>"; id may be "-1" (junk). Cameras are
// 1-based in filenames and 0-based in manifests.
bool parse_market_name(const std::string& stem, int* id, int* cam) {
    const std::size_t us = stem.find('_');
    if (us == std::string::npos || us == 0) return false;
    std::size_t id_from = 0;
    if (stem[0] == '-') id_from = 1;
    if (!all_digits(stem, id_from, us)) return false;

    std::size_t p = us + 1;
    if (p >= stem.size() || stem[p] != 'c') return false;
    const std::size_t cam_from = ++p;
    while (p < stem.size() && std::isdigit(static_cast<unsigned char>(stem[p]))) ++p;
    if (p == cam_from || p >= stem.size() || stem[p] != 's') return false;
    const std::size_t seq_from = ++p;
    while (p < stem.size() && std::isdigit(static_cast<unsigned char>(stem[p]))) ++p;
    if (p == seq_from) return false;

    if (p >= stem.size() || stem[p] != '_') return false;
    const std::size_t frame_end = stem.find('_', p + 1);
    if (frame_end == std::string::npos || !all_digits(stem, p + 1, frame_end)) return false;
    if (!all_digits(stem, frame_end + 1, stem.size())) return false;

    const long raw_id = std::strtol(stem.c_str(), nullptr, 10);
    const long raw_cam = std::strtol(stem.c_str() + cam_from, nullptr, 10);
    if (raw_cam < 1) return false;
    *id = static_cast<int>(raw_id);
    *cam = static_cast<int>(raw_cam - 1);
    return true;
}

bool image_extension(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace

DatasetManifest parse_reid_dir(const std::string& root) {
    const std::pair<const char*, Split> layouts[] = {
        {"train", Split::train},          {"bounding_box_train", Split::train},
        {"query", Split::query},          {"gallery", Split::gallery},
        {"bounding_box_test", Split::gallery},
    };
    DatasetManifest m;
    bool any_dir = false;
    for (const auto& [sub, split] : layouts) {
        const fs::path dir = fs::path(root) / sub;
        if (!fs::is_directory(dir)) continue;
        any_dir = true;
        std::vector<fs::path> files;
        for (const auto& entry : fs::directory_iterator(dir))
            if (entry.is_regular_file() && image_extension(entry.path()))
                files.push_back(entry.path());
        std::sort(files.begin(), files.end());
        for (const auto& file : files) {
            int id = 0, cam = 0;
            if (!parse_market_name(file.stem().string(), &id, &cam)) {
                ++m.skipped_files;
                log_info("skipping unparseable filename: " + file.filename().string());
                continue;
            }
            if (id < 0) continue;  // junk: never scored
            if (id == 0 && split != Split::gallery) {
                log_debug("dropping distractor outside the gallery: " + file.filename().string());
                continue;
            }
            ReIDSample s;
            s.file = file.string();
            s.id = id;
            s.cam = cam;
            s.split = split;
            m.samples.push_back(s);
        }
    }
    if (!any_dir)
        throw std::runtime_error("parse_reid_dir: no train/query/gallery subdirectories under " +
                                 root);

    // Relabel train identities to 0..N-1 and carry the mapping onto matching
    // evaluation ids. Evaluation-only ids (distractors, held-out identities)
    // get fresh labels above the train range so they can never collide with a
    // relabelled query identity.
    std::set<int> train_raw;
    for (const auto& s : m.samples)
        if (s.split == Split::train) train_raw.insert(s.id);
    std::map<int, int> relabel;
    for (int raw : train_raw) relabel[raw] = static_cast<int>(relabel.size());
    std::set<int> eval_only;
    for (const auto& s : m.samples)
        if (s.split != Split::train && relabel.find(s.id) == relabel.end()) eval_only.insert(s.id);
    std::map<int, int> extra;
    for (int raw : eval_only)
        extra[raw] = static_cast<int>(relabel.size() + extra.size());
    for (auto& s : m.samples) {
        const auto it = relabel.find(s.id);
        s.id = it != relabel.end() ? it->second : extra.at(s.id);
    }
    m.n_identities = relabel.size();
    m.validate();
    return m;
}

// ---------------------------------------------------------------------------
// manifest serialization

void save_manifest(const DatasetManifest& m, const std::string& path) {
    nlohmann::json j;
    j["identities"] = m.n_identities;
    j["samples"] = nlohmann::json::array();
    for (const auto& s : m.samples)
        j["samples"].push_back({{"file", s.file},
                                {"id", s.id},
                                {"cam", s.cam},
                                {"split", split_name(s.split)}});
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write manifest: " + path);
    out << j.dump(2) << '\n';
}

DatasetManifest load_manifest(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read manifest: " + path);
    DatasetManifest m;
    try {
        const nlohmann::json j = nlohmann::json::parse(in);
        m.n_identities = j.at("identities").get<std::size_t>();
        for (const auto& e : j.at("samples")) {
            ReIDSample s;
            s.file = e.at("file").get<std::string>();
            s.id = e.at("id").get<int>();
            s.cam = e.at("cam").get<int>();
            s.split = split_from_name(e.at("split").get<std::string>());
            m.samples.push_back(s);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw std::runtime_error("malformed manifest " + path + ": " + ex.what());
    }
    m.validate();
    return m;
}

void export_dataset(DatasetManifest& m, const std::string& dir) {
    if (!m.has_images()) throw std::runtime_error("export_dataset: manifest holds no images");
    for (Split s : {Split::train, Split::query, Split::gallery})
        fs::create_directories(fs::path(dir) / split_name(s));
    for (std::size_t i = 0; i < m.samples.size(); ++i) {
        auto& s = m.samples[i];
        char name[64];
        std::snprintf(name, sizeof(name), "%04d_c%ds1_%06zu_00.png", s.id + 1, s.cam + 1, i);
        const fs::path path = fs::path(dir) / split_name(s.split) / name;
        write_png(m.images[i], path.string());
        s.file = path.string();
    }
    save_manifest(m, (fs::path(dir) / "manifest.json").string());
}

void load_images(DatasetManifest& m) {
    m.images.clear();
    m.images.reserve(m.samples.size());
    for (const auto& s : m.samples) {
        if (s.file.empty()) throw std::runtime_error("load_images: sample without a file path");
        m.images.push_back(read_png(s.file));
    }
}

// ---------------------------------------------------------------------------
// batch sampling

std::vector<std::vector<std::size_t>> stage1_batches(const DatasetManifest& m, std::size_t batch,
                                                     Rng& rng) {
    if (batch == 0) throw std::invalid_argument("stage1_batches: batch size must be positive");
    std::vector<std::size_t> train = m.indices(Split::train);
    if (batch > train.size())
        throw std::invalid_argument("stage1_batches: batch size exceeds the train split");
    rng.shuffle(train);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t b = 0; b + batch <= train.size(); b += batch)
        out.emplace_back(train.begin() + static_cast<std::ptrdiff_t>(b),
                         train.begin() + static_cast<std::ptrdiff_t>(b + batch));
    return out;
}

std::vector<std::vector<std::size_t>> pk_batches(const DatasetManifest& m, std::size_t p,
                                                 std::size_t k, Rng& rng) {
    if (p < 2) throw std::invalid_argument("pk_batches: need at least two identities per batch");
    if (k == 0) throw std::invalid_argument("pk_batches: need at least one image per identity");
    if (m.n_identities < p)
        throw std::invalid_argument("pk_batches: fewer train identities than requested");
    std::vector<std::vector<std::size_t>> by_id(m.n_identities);
    for (std::size_t i = 0; i < m.samples.size(); ++i)
        if (m.samples[i].split == Split::train)
            by_id[static_cast<std::size_t>(m.samples[i].id)].push_back(i);

    std::vector<std::size_t> ids(m.n_identities);
    for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
    rng.shuffle(ids);

    std::vector<std::vector<std::size_t>> out;
    const std::size_t n_batches = m.n_identities / p;
    for (std::size_t b = 0; b < n_batches; ++b) {
        std::vector<std::size_t> batch;
        batch.reserve(p * k);
        for (std::size_t j = 0; j < p; ++j) {
            const auto& pool = by_id[ids[b * p + j]];
            if (pool.empty()) throw std::runtime_error("pk_batches: identity without train images");
            if (pool.size() >= k) {
                std::vector<std::size_t> copy = pool;
                for (std::size_t i = 0; i < k; ++i) {
                    const std::size_t pick = i + rng.index(copy.size() - i);
                    std::swap(copy[i], copy[pick]);
                    batch.push_back(copy[i]);
                }
            } else {
                for (std::size_t i = 0; i < k; ++i) batch.push_back(pool[rng.index(pool.size())]);
            }
        }
        out.push_back(std::move(batch));
    }
    return out;
}

}  // namespace svll
