#pragma once

#include <string>
#include <vector>

#include "svll/dataset.hpp"
#include "svll/image_encoder.hpp"
#include "svll/prompt.hpp"
#include "svll/text_encoder.hpp"
#include "svll/training.hpp"
#include "svll/vocab.hpp"

namespace svll {

/// One experiment, fully described: dataset source, model geometry, both
/// stage schedules and the evaluation knobs. A single seed feeds every
/// random draw in the run.
struct RunConfig {
    std::uint64_t seed = 1;
    std::string out_dir = "runs/default";

    std::string dataset_source = "synthetic";  // "synthetic" | "dir"
    std::string dataset_dir;
    SyntheticSpec synthetic;

    TextEncoderConfig text;    // vocab_size is derived from the prompt template
    ImageEncoderConfig image;
    std::size_t m_tokens = 4;
    std::string prompt_prefix = "a photo of a";
    std::string prompt_suffix = "person";

    Stage1Config stage1;
    Stage2Config stage2;
    std::size_t eval_max_rank = 10;
};

/// Default config, config file and --set overrides folded into one
/// canonical form. The digest is the SHA-256 of the canonical JSON and
/// identifies the experiment in checkpoints and logs.
struct LoadedConfig {
    RunConfig cfg;
    std::string canonical;  // resolved JSON, alphabetically ordered keys
    std::string digest;
};

/// Overrides use dotted paths, e.g. "stage1.lambda_lss=0". Unknown keys
/// and type-changing values are rejected. An empty path skips the file.
LoadedConfig resolve_config(const std::string& config_path,
                            const std::vector<std::string>& overrides);

/// The untrained model stack a config describes, built deterministically
/// from the config seed.
struct System {
    Vocabulary vocab;
    PromptTemplate tmpl;
    PromptBank<float> bank;
    TextEncoder<float> text;
    ImageEncoder<float> image;
};

/// `n_identities` sizes the prompt bank and comes from the dataset
/// (manifest.n_identities), so directory datasets work too.
System build_system(const RunConfig& cfg, std::size_t n_identities);

/// Copies the prompt bank and both encoders' weights out of a checkpoint.
/// Every parameter must be present with its exact shape.
void restore_system(System& sys, const Checkpoint& ck);

/// Synthetic manifests are generated in memory (the config seed overrides
/// the synthetic section's); directory sources are parsed and decoded.
DatasetManifest load_dataset(const RunConfig& cfg);

}  // namespace svll
