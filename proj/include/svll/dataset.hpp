#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "svll/image.hpp"
#include "svll/rng.hpp"

namespace svll {

enum class Split { train, query, gallery };

const char* split_name(Split s);
Split split_from_name(const std::string& name);

/// One bounding-box crop. Identities and cameras are nonnegative; junk
/// entries (id -1 in source filenames) never make it into a manifest.
struct ReIDSample {
    std::string file;  // empty while the sample only exists in memory
    int id = 0;
    int cam = 0;
    Split split = Split::train;
};

/// Knobs for the synthetic person generator. Nuisance strengths live in
/// [0,1]; setting all three to zero makes every image of an identity
/// pixel-identical.
struct SyntheticSpec {
    std::size_t n_identities = 20;
    std::size_t train_per_id = 8;
    std::size_t query_per_id = 4;
    std::size_t gallery_per_id = 8;
    std::size_t cameras = 2;
    std::size_t height = 64;
    std::size_t width = 32;
    double clutter = 0.5;       // background rectangle noise
    double illumination = 0.3;  // per-camera brightness shift + per-image jitter
    double occlusion = 0.4;     // probability of a flat occluding rectangle
    std::uint64_t seed = 1;
};

/// Sample list plus (optionally) decoded pixels, parallel by index.
/// Train identities always form the contiguous range 0..n_identities-1.
struct DatasetManifest {
    std::size_t n_identities = 0;
    std::vector<ReIDSample> samples;
    std::vector<Image> images;      // empty, or one image per sample
    std::size_t skipped_files = 0;  // image files with unparseable names

    std::vector<std::size_t> indices(Split s) const;
    std::size_t count(Split s) const;
    bool has_images() const { return images.size() == samples.size(); }

    /// Indices of the train samples of one identity.
    std::vector<std::size_t> train_of(int id) const;

    /// Throws std::runtime_error when an invariant is broken (train labels
    /// not contiguous, negative ids/cams, query without gallery).
    void validate() const;
};

/// Deterministic in-memory dataset: one latent appearance per identity,
/// rendered under camera illumination, background clutter and optional
/// occluders, then quantized to 1/255 steps so pixels survive a PNG
/// round trip bit-for-bit.
DatasetManifest generate_synthetic(const SyntheticSpec& spec);

/// Scans train/query/gallery (or Market-style bounding_box_train / query /
/// bounding_box_test) subdirectories of `root` for image files named
/// "<id>_c<cam>s<seq>_<frame>_<idx>.<ext>". Junk entries (id -1) are
/// dropped everywhere; distractors (id 0) are kept in the gallery only.
/// Train labels are relabelled to a contiguous range; the same mapping is
/// applied to evaluation ids when they are known train identities.
/// Files whose names do not fit the grammar are counted and skipped.
DatasetManifest parse_reid_dir(const std::string& root);

void save_manifest(const DatasetManifest& m, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

/// Writes PNGs (Market-style names, 1-based ids/cams) into split
/// subdirectories of `dir`, fills in the sample file paths and saves
/// manifest.json alongside. Requires in-memory images.
void export_dataset(DatasetManifest& m, const std::string& dir);

/// Decodes every sample's file into `images`. Requires file paths.
void load_images(DatasetManifest& m);

/// One epoch of uniformly shuffled train batches of exactly `batch`
/// samples; the short remainder is dropped. Reproducible from the caller's
/// Rng. Throws when batch is zero or exceeds the train-split size.
std::vector<std::vector<std::size_t>> stage1_batches(const DatasetManifest& m,
                                                     std::size_t batch, Rng& rng);

/// One epoch of identity-balanced batches: p identities without
/// replacement per batch (and across the epoch), k train images each.
/// Identities holding fewer than k images are resampled with replacement.
/// Throws when p < 2, k == 0, or fewer than p train identities exist.
std::vector<std::vector<std::size_t>> pk_batches(const DatasetManifest& m,
                                                 std::size_t p, std::size_t k,
                                                 Rng& rng);

}  // namespace svll
