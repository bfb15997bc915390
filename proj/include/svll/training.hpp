#pragma once

#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "svll/dataset.hpp"
#include "svll/image_encoder.hpp"
#include "svll/optim.hpp"
#include "svll/prompt.hpp"
#include "svll/text_encoder.hpp"

namespace svll {

/// Stage 1: learn the prompt bank against frozen encoders.
struct Stage1Config {
    std::size_t epochs = 60;
    std::size_t batch = 64;
    double lr = 3.5e-4;      // cosine-annealed per epoch
    double alpha = 0.5;      // prompt-token mask ratio
    double lambda_lss = 0.8; // 0 drops the masked-prompt term entirely
    double tau = 0.07;
    std::uint64_t seed = 1;
};

/// Stage 2: fine-tune the image encoder (plus a fresh classifier head)
/// against the frozen per-identity text features.
struct Stage2Config {
    std::size_t epochs = 60;
    std::size_t p = 16;      // identities per batch
    std::size_t k = 4;       // images per identity
    WarmupStepSchedule schedule;
    double lr_scale = 1.0;   // multiplies the schedule; desk-scale runs need > 1
    double beta = 1.0 / 3.0; // erased-area fraction
    double lambda_vss = 0.8; // 0 drops the erased-pair term entirely
    double tau = 0.07;
    double margin = 0.3;
    double eps = 0.1;        // label smoothing
    bool pair_from_same_image = false;  // instance-level positive pairs instead
    std::uint64_t seed = 1;
};

/// On-disk training state: magic "SVLL", format version, config digest,
/// stage tag, completed-epoch count, rng state, then named tensor blobs
/// (prompt bank, encoder weights, classifier head, id text features and
/// optimizer moments).
struct Checkpoint {
    std::string config_digest;
    std::string stage;        // "stage1" | "stage2"
    std::uint64_t epoch = 0;  // epochs completed so far
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor<float>>> blobs;

    const Tensor<float>* find(const std::string& name) const;
    const Tensor<float>& require(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ck, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

/// Tab-separated "step<TAB>name<TAB>value" stream, one line per metric.
class MetricsLog {
   public:
    MetricsLog() = default;
    MetricsLog(const std::string& path, bool append);
    void record(std::size_t step, const std::string& name, double value);

   private:
    std::ofstream out_;
};

/// Optional run outputs. Empty paths disable the corresponding artifact.
struct RunHooks {
    std::string checkpoint_path;  // rewritten after every epoch
    std::string metrics_path;
    std::string config_digest;    // stamped into checkpoints, checked on resume
    bool append_metrics = false;
    std::size_t stop_after_epochs = 0;  // >0: return after that many epochs here
    std::function<void(std::size_t epoch, double mean_loss)> on_epoch;  // after each epoch
};

struct StageReport {
    std::size_t steps = 0;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;  // mean total loss of each epoch run here
};

/// Unit-norm encoder embeddings for the chosen samples, one row per index.
Tensor<float> embed_images(ImageEncoder<float>& image, const DatasetManifest& data,
                           const std::vector<std::size_t>& idx);

/// Stage 1 trains the prompt bank only. Train images are embedded once by
/// the frozen encoder, then centered and re-normalized so the prompt
/// contrastive losses see a spread feature cloud even when the backbone is
/// untrained.
StageReport run_stage1(const DatasetManifest& data, const PromptTemplate& tmpl,
                       PromptBank<float>& bank, TextEncoder<float>& text,
                       ImageEncoder<float>& image, const Stage1Config& cfg,
                       const RunHooks& hooks = {}, const Checkpoint* resume = nullptr);

/// One frozen unit-norm text feature per identity, row id = identity id.
Tensor<float> compute_id_text_features(const PromptTemplate& tmpl, PromptBank<float>& bank,
                                       TextEncoder<float>& text);

/// `carry` blobs (typically the stage-1 bank and text-encoder weights) are
/// copied verbatim into every checkpoint this stage writes.
StageReport run_stage2(const DatasetManifest& data, ImageEncoder<float>& image,
                       const Tensor<float>& id_text, const Stage2Config& cfg,
                       const RunHooks& hooks = {}, const Checkpoint* resume = nullptr,
                       const std::vector<std::pair<std::string, Tensor<float>>>& carry = {});

}  // namespace svll
