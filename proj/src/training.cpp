#include "svll/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "svll/log.hpp"
#include "svll/losses.hpp"
#include "svll/serialize.hpp"

namespace svll {

// ---------------------------------------------------------------------------
// checkpoint file format

namespace {
constexpr char kMagic[4] = {'S', 'V', 'L', 'L'};
constexpr std::uint64_t kVersion = 1;
}  // namespace

const Tensor<float>* Checkpoint::find(const std::string& name) const {
    for (const auto& [n, t] : blobs)
        if (n == name) return &t;
    return nullptr;
}

const Tensor<float>& Checkpoint::require(const std::string& name) const {
    const Tensor<float>* t = find(name);
    if (t == nullptr) throw std::runtime_error("checkpoint: missing tensor '" + name + "'");
    return *t;
}

void save_checkpoint(const Checkpoint& ck, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, 4);
    write_u64(out, kVersion);
    write_string(out, ck.config_digest);
    write_string(out, ck.stage);
    write_u64(out, ck.epoch);
    write_string(out, ck.rng_state);
    write_u64(out, ck.blobs.size());
    for (const auto& [name, t] : ck.blobs) write_tensor_blob(out, name, t);
    if (!out) throw std::runtime_error("short write on checkpoint: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw std::runtime_error("not a checkpoint file: " + path);
    const std::uint64_t version = read_u64(in);
    if (version != kVersion)
        throw std::runtime_error("unsupported checkpoint version " + std::to_string(version) +
                                 " in " + path);
    Checkpoint ck;
    ck.config_digest = read_string(in);
    ck.stage = read_string(in);
    ck.epoch = read_u64(in);
    ck.rng_state = read_string(in);
    const std::uint64_t n = read_u64(in);
    for (std::uint64_t i = 0; i < n; ++i) ck.blobs.push_back(read_tensor_blob(in));
    return ck;
}

// ---------------------------------------------------------------------------
// metrics log

MetricsLog::MetricsLog(const std::string& path, bool append) {
    if (path.empty()) return;
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics log: " + path);
}

void MetricsLog::record(std::size_t step, const std::string& name, double value) {
    if (!out_.is_open()) return;
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", value);
    out_ << step << '\t' << name << '\t' << buf << '\n';
}

// ---------------------------------------------------------------------------
// shared helpers

namespace {

Image prep_image(const Image& img, const ImageEncoderConfig& cfg) {
    if (img.height == cfg.height && img.width == cfg.width) return img;
    return resize_normalize(img, cfg.height, cfg.width);
}

/// Distinct labels in first-appearance order plus, per sample, the index of
/// its label in that distinct list.
void split_distinct(const std::vector<int>& labels, std::vector<int>* distinct,
                    std::vector<std::size_t>* position) {
    distinct->clear();
    position->clear();
    for (int l : labels) {
        std::size_t at = 0;
        while (at < distinct->size() && (*distinct)[at] != l) ++at;
        if (at == distinct->size()) distinct->push_back(l);
        position->push_back(at);
    }
}

void check_finite(double v, const char* stage, std::size_t step, const std::string& parts) {
    if (std::isfinite(v)) return;
    throw std::runtime_error(std::string(stage) + ": non-finite loss at step " +
                             std::to_string(step) + " (" + parts + ")");
}

void verify_frozen_blobs(const Checkpoint& ck, const std::vector<Parameter<float>*>& params,
                         const char* what) {
    for (const auto* p : params) {
        const Tensor<float>& saved = ck.require(p->name);
        if (!(saved.shape == p->value.shape) || saved.data != p->value.data)
            throw std::runtime_error(std::string("resume: checkpoint ") + what + " weights for '" +
                                     p->name + "' disagree with the live model");
    }
}

void restore_adam(const Checkpoint& ck, const std::string& prefix, AdamState<float>* adam,
                  const std::vector<Parameter<float>*>& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        const Tensor<float>& m = ck.require(prefix + ".m." + params[i]->name);
        const Tensor<float>& v = ck.require(prefix + ".v." + params[i]->name);
        if (!(m.shape == params[i]->value.shape) || !(v.shape == params[i]->value.shape))
            throw std::runtime_error("resume: optimizer moment shape mismatch for '" +
                                     params[i]->name + "'");
        adam->m[i] = m;
        adam->v[i] = v;
    }
    adam->step = static_cast<long>(ck.require(prefix + ".step").data.at(0));
}

void append_adam(Checkpoint* ck, const std::string& prefix, const AdamState<float>& adam,
                 const std::vector<Parameter<float>*>& params) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        ck->blobs.emplace_back(prefix + ".m." + params[i]->name, adam.m[i]);
        ck->blobs.emplace_back(prefix + ".v." + params[i]->name, adam.v[i]);
    }
    Tensor<float> t({1, 1});
    t.data[0] = static_cast<float>(adam.step);
    ck->blobs.emplace_back(prefix + ".step", t);
}

}  // namespace

Tensor<float> embed_images(ImageEncoder<float>& image, const DatasetManifest& data,
                           const std::vector<std::size_t>& idx) {
    if (!data.has_images()) throw std::invalid_argument("embed_images: manifest holds no pixels");
    const std::size_t d = image.config().d_embed;
    Tensor<float> out = Tensor<float>::matrix(idx.size(), d);
    for (std::size_t r = 0; r < idx.size(); ++r) {
        auto emb = image.encode(prep_image(data.images[idx[r]], image.config()));
        for (std::size_t c = 0; c < d; ++c) out.at(r, c) = emb.val().at(0, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// stage 1

StageReport run_stage1(const DatasetManifest& data, const PromptTemplate& tmpl,
                       PromptBank<float>& bank, TextEncoder<float>& text,
                       ImageEncoder<float>& image, const Stage1Config& cfg,
                       const RunHooks& hooks, const Checkpoint* resume) {
    if (!data.has_images()) throw std::invalid_argument("stage1: manifest holds no pixels");
    if (cfg.alpha < 0.0 || cfg.alpha > 1.0) throw std::invalid_argument("stage1: alpha outside [0,1]");
    if (cfg.lambda_lss < 0.0) throw std::invalid_argument("stage1: lambda_lss must be >= 0");
    if (bank.n_identities != data.n_identities)
        throw std::invalid_argument("stage1: prompt bank sized for a different identity count");

    text.set_trainable(false);
    image.set_trainable(false);

    const std::vector<std::size_t> train_idx = data.indices(Split::train);
    const std::size_t steps_per_epoch = train_idx.size() / cfg.batch;

    // Frozen image encoder: embed the train split once up front. The raw
    // embeddings of an untrained encoder crowd around one direction (the
    // class-token stream is dominated by an image-independent component),
    // which leaves the cross-modal softmax without usable signal; centering
    // and re-normalizing restores the angular spread that a pretrained
    // backbone would provide while preserving the ranking geometry.
    Tensor<float> cache = embed_images(image, data, train_idx);
    {
        const std::size_t n = cache.shape[0], d = cache.shape[1];
        std::vector<double> mean(d, 0.0);
        for (std::size_t r = 0; r < n; ++r)
            for (std::size_t c = 0; c < d; ++c) mean[c] += cache.at(r, c);
        for (auto& m : mean) m /= static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
            double sq = 0.0;
            for (std::size_t c = 0; c < d; ++c) {
                const double v = cache.at(r, c) - mean[c];
                cache.at(r, c) = static_cast<float>(v);
                sq += v * v;
            }
            const float inv = static_cast<float>(1.0 / std::max(std::sqrt(sq), 1e-12));
            for (std::size_t c = 0; c < d; ++c) cache.at(r, c) *= inv;
        }
    }
    std::vector<std::size_t> cache_row(data.samples.size(), 0);
    for (std::size_t r = 0; r < train_idx.size(); ++r) cache_row[train_idx[r]] = r;

    std::vector<Parameter<float>*> opt_params{&bank.tokens};
    AdamState<float> adam(opt_params);
    std::size_t start_epoch = 0;
    if (resume != nullptr) {
        if (resume->stage != "stage1")
            throw std::runtime_error("resume: checkpoint is for " + resume->stage + ", not stage1");
        if (resume->config_digest != hooks.config_digest)
            throw std::runtime_error("resume: config digest mismatch");
        const Tensor<float>& tokens = resume->require("prompt_bank");
        if (!(tokens.shape == bank.tokens.value.shape))
            throw std::runtime_error("resume: prompt bank shape mismatch");
        bank.tokens.value = tokens;
        verify_frozen_blobs(*resume, text.params(), "text-encoder");
        verify_frozen_blobs(*resume, image.params(), "image-encoder");
        restore_adam(*resume, "adam", &adam, opt_params);
        start_epoch = resume->epoch;
        if (start_epoch > cfg.epochs) throw std::runtime_error("resume: epoch beyond schedule");
    }

    MetricsLog metrics(hooks.metrics_path, hooks.append_metrics);
    StageReport report;
    std::size_t step = start_epoch * steps_per_epoch;
    std::string rng_state = Rng::substream(cfg.seed, 1, start_epoch).state();

    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = cosine_lr(static_cast<int>(epoch), static_cast<int>(cfg.epochs), cfg.lr);
        metrics.record(step, "stage1/lr", lr);
        Rng shuffle_rng = Rng::substream(cfg.seed, 1, epoch);
        const auto batches = stage1_batches(data, cfg.batch, shuffle_rng);
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<int> labels;
            Tensor<float> img_rows = Tensor<float>::matrix(batches[b].size(), cache.shape[1]);
            for (std::size_t i = 0; i < batches[b].size(); ++i) {
                labels.push_back(data.samples[batches[b][i]].id);
                for (std::size_t c = 0; c < cache.shape[1]; ++c)
                    img_rows.at(i, c) = cache.at(cache_row[batches[b][i]], c);
            }
            std::vector<int> distinct;
            std::vector<std::size_t> position;
            split_distinct(labels, &distinct, &position);

            auto bank_mat = bank.matrix();
            auto words = text.word_table();
            std::vector<EmbeddedPrompt<float>> prompts;
            std::vector<Value<float>> feats;
            for (int id : distinct) {
                prompts.push_back(
                    assemble_prompt(tmpl, static_cast<std::size_t>(id), bank_mat, words));
                feats.push_back(text.encode(prompts.back()));
            }
            auto text_rows = gather_rows(concat_rows(feats), position);

            LabeledBatch<float> text_b{text_rows, labels};
            LabeledBatch<float> image_b{constant(img_rows, "image_cache"), labels};
            auto l_t2i = loss_t2i(text_b, image_b);
            auto l_i2t = loss_i2t(image_b, text_b);

            Value<float> l_lss = constant_scalar(0.0f);
            if (cfg.lambda_lss > 0.0) {
                Rng mask_rng = Rng::substream(cfg.seed, 2, epoch, b);
                std::vector<Value<float>> views;
                for (const auto& p : prompts) {
                    views.push_back(text.encode(mask_prompt(p, cfg.alpha, mask_rng)));
                    views.push_back(text.encode(mask_prompt(p, cfg.alpha, mask_rng)));
                }
                l_lss = loss_ntxent(PairBatch<float>{concat_rows(views), static_cast<float>(cfg.tau)});
            }
            auto total =
                stage1_total(l_t2i, l_i2t, l_lss, static_cast<float>(cfg.lambda_lss));

            const double v_t2i = l_t2i.val().data[0], v_i2t = l_i2t.val().data[0];
            const double v_lss = l_lss.val().data[0], v_total = total.val().data[0];
            check_finite(v_total, "stage1", step,
                         "t2i=" + std::to_string(v_t2i) + " i2t=" + std::to_string(v_i2t) +
                             " lss=" + std::to_string(v_lss));
            gradients(total, opt_params);
            AdamConfig acfg;
            acfg.lr = lr;
            adam_step(opt_params, adam, acfg);

            metrics.record(step, "stage1/t2i", v_t2i);
            metrics.record(step, "stage1/i2t", v_i2t);
            metrics.record(step, "stage1/lss", v_lss);
            metrics.record(step, "stage1/total", v_total);
            epoch_sum += v_total;
            report.final_loss = v_total;
            ++step;
            ++report.steps;
        }
        report.epoch_loss.push_back(epoch_sum / static_cast<double>(batches.size()));
        rng_state = shuffle_rng.state();

        if (!hooks.checkpoint_path.empty()) {
            Checkpoint ck;
            ck.config_digest = hooks.config_digest;
            ck.stage = "stage1";
            ck.epoch = epoch + 1;
            ck.rng_state = rng_state;
            ck.blobs.emplace_back("prompt_bank", bank.tokens.value);
            for (auto* p : text.params()) ck.blobs.emplace_back(p->name, p->value);
            for (auto* p : image.params()) ck.blobs.emplace_back(p->name, p->value);
            ck.blobs.emplace_back("id_text", compute_id_text_features(tmpl, bank, text));
            append_adam(&ck, "adam", adam, opt_params);
            save_checkpoint(ck, hooks.checkpoint_path);
        }
        log_debug("stage1 epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                  " mean loss " + std::to_string(report.epoch_loss.back()));
        if (hooks.on_epoch) hooks.on_epoch(epoch + 1, report.epoch_loss.back());
        if (hooks.stop_after_epochs > 0 && epoch + 1 - start_epoch >= hooks.stop_after_epochs)
            break;
    }
    return report;
}

Tensor<float> compute_id_text_features(const PromptTemplate& tmpl, PromptBank<float>& bank,
                                       TextEncoder<float>& text) {
    const std::size_t n = bank.n_identities;
    const std::size_t d = text.config().d_embed;
    Tensor<float> out = Tensor<float>::matrix(n, d);
    auto bank_mat = bank.matrix();
    auto words = text.word_table();
    for (std::size_t id = 0; id < n; ++id) {
        auto feat = text.encode(assemble_prompt(tmpl, id, bank_mat, words));
        for (std::size_t c = 0; c < d; ++c) out.at(id, c) = feat.val().at(0, c);
    }
    return out;
}

// ---------------------------------------------------------------------------
// stage 2

StageReport run_stage2(const DatasetManifest& data, ImageEncoder<float>& image,
                       const Tensor<float>& id_text, const Stage2Config& cfg,
                       const RunHooks& hooks, const Checkpoint* resume,
                       const std::vector<std::pair<std::string, Tensor<float>>>& carry) {
    if (!data.has_images()) throw std::invalid_argument("stage2: manifest holds no pixels");
    if (cfg.beta < 0.0 || cfg.beta >= 1.0) throw std::invalid_argument("stage2: beta outside [0,1)");
    if (cfg.lambda_vss < 0.0) throw std::invalid_argument("stage2: lambda_vss must be >= 0");
    if (id_text.rank() != 2 || id_text.shape[0] != data.n_identities ||
        id_text.shape[1] != image.config().d_embed)
        throw std::invalid_argument("stage2: id text feature matrix has the wrong shape");
    if (!(cfg.lr_scale > 0.0)) throw std::invalid_argument("stage2: lr_scale must be positive");

    image.set_trainable(true);

    // Encoder-geometry pixels for every train sample, erased views included.
    std::vector<Image> prepped(data.samples.size());
    std::vector<Image> train_images;
    for (std::size_t i : data.indices(Split::train)) {
        prepped[i] = prep_image(data.images[i], image.config());
        train_images.push_back(prepped[i]);
    }
    const std::array<float, 3> fill = mean_pixel(train_images);

    Rng init_rng = Rng::substream(cfg.seed, 5);
    Tensor<float> head_init({image.config().d_embed, data.n_identities});
    for (auto& v : head_init.data) v = static_cast<float>(init_rng.normal()) * 0.02f;
    Parameter<float> head("head.weight", std::move(head_init));

    std::vector<Parameter<float>*> opt_params = image.params();
    opt_params.push_back(&head);
    AdamState<float> adam(opt_params);

    std::size_t start_epoch = 0;
    if (resume != nullptr) {
        if (resume->stage != "stage2")
            throw std::runtime_error("resume: checkpoint is for " + resume->stage + ", not stage2");
        if (resume->config_digest != hooks.config_digest)
            throw std::runtime_error("resume: config digest mismatch");
        for (auto* p : image.params()) {
            const Tensor<float>& saved = resume->require(p->name);
            if (!(saved.shape == p->value.shape))
                throw std::runtime_error("resume: shape mismatch for '" + p->name + "'");
            p->value = saved;
        }
        head.value = resume->require("head.weight");
        const Tensor<float>& saved_id_text = resume->require("id_text");
        if (!(saved_id_text.shape == id_text.shape) || saved_id_text.data != id_text.data)
            throw std::runtime_error("resume: id text features disagree with the checkpoint");
        restore_adam(*resume, "adam", &adam, opt_params);
        start_epoch = resume->epoch;
        if (start_epoch > cfg.epochs) throw std::runtime_error("resume: epoch beyond schedule");
    }

    MetricsLog metrics(hooks.metrics_path, hooks.append_metrics);
    StageReport report;
    const std::size_t steps_per_epoch = data.n_identities / cfg.p;
    std::size_t step = start_epoch * steps_per_epoch;

    for (std::size_t epoch = start_epoch; epoch < cfg.epochs; ++epoch) {
        const double lr = warmup_step_lr(static_cast<int>(epoch), cfg.schedule) * cfg.lr_scale;
        metrics.record(step, "stage2/lr", lr);
        Rng shuffle_rng = Rng::substream(cfg.seed, 3, epoch);
        const auto batches = pk_batches(data, cfg.p, cfg.k, shuffle_rng);
        double epoch_sum = 0.0;
        for (std::size_t b = 0; b < batches.size(); ++b) {
            std::vector<int> labels;
            std::vector<Value<float>> rows;
            for (std::size_t i : batches[b]) {
                labels.push_back(data.samples[i].id);
                rows.push_back(image.encode(prepped[i]));
            }
            auto emb = concat_rows(rows);
            LabeledBatch<float> batch{emb, labels};

            auto l_i2tce = loss_i2tce(batch, constant(id_text, "id_text"), cfg.eps);
            auto logits = matmul(emb, leaf(head));
            auto l_id = loss_id(logits, labels, cfg.eps);
            auto l_tri = loss_triplet(batch, static_cast<float>(cfg.margin));

            Value<float> l_vss = constant_scalar(0.0f);
            if (cfg.lambda_vss > 0.0) {
                Rng erase_rng = Rng::substream(cfg.seed, 4, epoch, b);
                std::vector<int> distinct;
                std::vector<std::size_t> position;
                split_distinct(labels, &distinct, &position);
                std::vector<Value<float>> views;
                for (std::size_t v = 0; v < distinct.size(); ++v) {
                    std::vector<std::size_t> members;
                    for (std::size_t i = 0; i < labels.size(); ++i)
                        if (position[i] == v) members.push_back(batches[b][i]);
                    std::size_t first, second;
                    if (cfg.pair_from_same_image || members.size() < 2) {
                        first = second = members[erase_rng.index(members.size())];
                    } else {
                        first = erase_rng.index(members.size());
                        second = erase_rng.index(members.size() - 1);
                        if (second >= first) ++second;
                        first = members[first];
                        second = members[second];
                    }
                    for (std::size_t src : {first, second}) {
                        auto view = erase(prepped[src], cfg.beta, erase_rng, fill);
                        views.push_back(image.encode(view.image));
                    }
                }
                l_vss =
                    loss_ntxent(PairBatch<float>{concat_rows(views), static_cast<float>(cfg.tau)});
            }
            auto total = stage2_total(l_i2tce, l_id, l_tri, l_vss,
                                      static_cast<float>(cfg.lambda_vss));

            const double v_i2tce = l_i2tce.val().data[0], v_id = l_id.val().data[0];
            const double v_tri = l_tri.val().data[0], v_vss = l_vss.val().data[0];
            const double v_total = total.val().data[0];
            check_finite(v_total, "stage2", step,
                         "i2tce=" + std::to_string(v_i2tce) + " id=" + std::to_string(v_id) +
                             " tri=" + std::to_string(v_tri) + " vss=" + std::to_string(v_vss));
            gradients(total, opt_params);
            AdamConfig acfg;
            acfg.lr = lr;
            adam_step(opt_params, adam, acfg);

            metrics.record(step, "stage2/i2tce", v_i2tce);
            metrics.record(step, "stage2/id", v_id);
            metrics.record(step, "stage2/triplet", v_tri);
            metrics.record(step, "stage2/vss", v_vss);
            metrics.record(step, "stage2/total", v_total);
            epoch_sum += v_total;
            report.final_loss = v_total;
            ++step;
            ++report.steps;
        }
        report.epoch_loss.push_back(epoch_sum / static_cast<double>(batches.size()));

        if (!hooks.checkpoint_path.empty()) {
            Checkpoint ck;
            ck.config_digest = hooks.config_digest;
            ck.stage = "stage2";
            ck.epoch = epoch + 1;
            ck.rng_state = shuffle_rng.state();
            for (const auto& blob : carry) ck.blobs.push_back(blob);
            for (auto* p : image.params()) ck.blobs.emplace_back(p->name, p->value);
            ck.blobs.emplace_back("head.weight", head.value);
            ck.blobs.emplace_back("id_text", id_text);
            append_adam(&ck, "adam", adam, opt_params);
            save_checkpoint(ck, hooks.checkpoint_path);
        }
        log_debug("stage2 epoch " + std::to_string(epoch + 1) + "/" + std::to_string(cfg.epochs) +
                  " mean loss " + std::to_string(report.epoch_loss.back()));
        if (hooks.on_epoch) hooks.on_epoch(epoch + 1, report.epoch_loss.back());
        if (hooks.stop_after_epochs > 0 && epoch + 1 - start_epoch >= hooks.stop_after_epochs)
            break;
    }
    return report;
}

}  // namespace svll
