#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "svll/config.hpp"
#include "svll/evaluation.hpp"
#include "svll/log.hpp"
#include "svll/training.hpp"

namespace fs = std::filesystem;

using svll::Checkpoint;
using svll::DatasetManifest;
using svll::LoadedConfig;
using svll::Matrix;
using svll::RunConfig;
using svll::Split;
using svll::System;
using svll::Tensor;

namespace {

Matrix rows_of(const Tensor<float>& t) {
    if (t.shape.size() != 2) throw std::logic_error("rows_of: expected a matrix");
    Matrix m(t.shape[0], std::vector<double>(t.shape[1]));
    for (std::size_t i = 0; i < t.shape[0]; ++i)
        for (std::size_t j = 0; j < t.shape[1]; ++j) m[i][j] = t.data[i * t.shape[1] + j];
    return m;
}

void echo_config(const LoadedConfig& lc) {
    std::printf("config: %s\n", lc.canonical.c_str());
    std::printf("config digest: %s\n", lc.digest.c_str());
}

std::string artifact(const RunConfig& cfg, const std::string& leaf) {
    return (fs::path(cfg.out_dir) / leaf).string();
}

/// The model stack, restored from a checkpoint unless `fresh` asks for the
/// untrained initialization. Returns the stage tag describing the weights.
std::string prepare_system(System& sys, const RunConfig& cfg, const std::string& ck_path, bool fresh) {
    if (fresh) return "untrained";
    const std::string path = ck_path.empty() ? artifact(cfg, "stage2.ckpt") : ck_path;
    Checkpoint ck = svll::load_checkpoint(path);
    svll::restore_system(sys, ck);
    return ck.stage;
}

void cmd_gen_data(const LoadedConfig& lc, std::string out) {
    const RunConfig& cfg = lc.cfg;
    if (cfg.dataset_source != "synthetic") {
        throw std::runtime_error("gen-data renders synthetic datasets; dataset.source is \"" +
                                 cfg.dataset_source + "\"");
    }
    if (out.empty()) out = artifact(cfg, "data");
    DatasetManifest m = svll::load_dataset(cfg);
    svll::export_dataset(m, out);
    std::printf("wrote %zu identities, %zu train / %zu query / %zu gallery images to %s\n",
                m.n_identities, m.count(Split::train), m.count(Split::query), m.count(Split::gallery),
                out.c_str());
}

void cmd_train(const LoadedConfig& lc, int stage, bool resume) {
    const RunConfig& cfg = lc.cfg;
    fs::create_directories(cfg.out_dir);
    DatasetManifest data = svll::load_dataset(cfg);
    data.validate();
    System sys = svll::build_system(cfg, data.n_identities);

    const std::string tag = "stage" + std::to_string(stage);
    svll::RunHooks hooks;
    hooks.checkpoint_path = artifact(cfg, tag + ".ckpt");
    hooks.metrics_path = artifact(cfg, tag + "_metrics.tsv");
    hooks.config_digest = lc.digest;
    hooks.append_metrics = resume;
    hooks.on_epoch = [&](std::size_t epoch, double loss) {
        svll::log_info(tag + " epoch " + std::to_string(epoch) + " mean loss " + std::to_string(loss));
    };

    Checkpoint resume_ck;
    const Checkpoint* resume_ptr = nullptr;
    if (resume) {
        resume_ck = svll::load_checkpoint(hooks.checkpoint_path);
        resume_ptr = &resume_ck;
    }

    svll::StageReport report;
    if (stage == 1) {
        report = svll::run_stage1(data, sys.tmpl, sys.bank, sys.text, sys.image, cfg.stage1, hooks,
                                  resume_ptr);
    } else {
        const std::string s1_path = artifact(cfg, "stage1.ckpt");
        if (!fs::exists(s1_path)) {
            throw std::runtime_error("train --stage 2 requires a stage-1 checkpoint at " + s1_path +
                                     "; run train --stage 1 first");
        }
        Checkpoint ck1 = svll::load_checkpoint(s1_path);
        if (ck1.stage != "stage1") {
            throw std::runtime_error("checkpoint " + s1_path + " is not a stage-1 checkpoint");
        }
        if (ck1.config_digest != lc.digest) {
            throw std::runtime_error("config digest mismatch: " + s1_path +
                                     " was written under a different config");
        }
        svll::restore_system(sys, ck1);
        const Tensor<float>& id_text = ck1.require("id_text");

        std::vector<std::pair<std::string, Tensor<float>>> carry;
        carry.emplace_back(sys.bank.tokens.name, sys.bank.tokens.value);
        for (auto* p : sys.text.params()) carry.emplace_back(p->name, p->value);
        report = svll::run_stage2(data, sys.image, id_text, cfg.stage2, hooks, resume_ptr, carry);
    }
    std::printf("%s: %zu steps, final loss %.6f, checkpoint %s, metrics %s\n", tag.c_str(),
                report.steps, report.final_loss, hooks.checkpoint_path.c_str(),
                hooks.metrics_path.c_str());
}

void cmd_eval(const LoadedConfig& lc, const std::string& ck_path, bool fresh, std::string out) {
    const RunConfig& cfg = lc.cfg;
    DatasetManifest data = svll::load_dataset(cfg);
    System sys = svll::build_system(cfg, data.n_identities);
    const std::string tag = prepare_system(sys, cfg, ck_path, fresh);

    const auto qi = data.indices(Split::query);
    const auto gi = data.indices(Split::gallery);
    Matrix dist = svll::pairwise_distances(rows_of(svll::embed_images(sys.image, data, qi)),
                                           rows_of(svll::embed_images(sys.image, data, gi)));
    std::vector<int> q_ids, q_cams, g_ids, g_cams;
    for (std::size_t i : qi) q_ids.push_back(data.samples[i].id), q_cams.push_back(data.samples[i].cam);
    for (std::size_t i : gi) g_ids.push_back(data.samples[i].id), g_cams.push_back(data.samples[i].cam);
    svll::EvalReport rep = svll::evaluate(dist, q_ids, q_cams, g_ids, g_cams, cfg.eval_max_rank);

    if (out.empty()) out = artifact(cfg, "eval.json");
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    svll::save_report(rep, out);

    std::printf("weights: %s\n", tag.c_str());
    std::printf("mAP     %.4f\n", rep.mean_ap);
    for (std::size_t r : {std::size_t(1), std::size_t(5), std::size_t(10)}) {
        if (r <= rep.cmc.size()) std::printf("Rank-%-2zu %.4f\n", r, rep.cmc[r - 1]);
    }
    std::printf("queries: %zu scored, %zu skipped\n", rep.valid_queries, rep.skipped_queries);
    std::printf("report: %s\n", out.c_str());
}

void cmd_embed(const LoadedConfig& lc, const std::string& split, const std::string& ck_path, bool fresh,
               std::string out) {
    const RunConfig& cfg = lc.cfg;
    DatasetManifest data = svll::load_dataset(cfg);
    System sys = svll::build_system(cfg, data.n_identities);
    prepare_system(sys, cfg, ck_path, fresh);

    const auto idx = data.indices(svll::split_from_name(split));
    if (idx.empty()) throw std::runtime_error("embed: split \"" + split + "\" is empty");
    Tensor<float> emb = svll::embed_images(sys.image, data, idx);

    if (out.empty()) out = artifact(cfg, "embed_" + split + ".tsv");
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    std::FILE* f = std::fopen(out.c_str(), "wb");
    if (!f) throw std::runtime_error("embed: cannot write " + out);
    const std::size_t d = emb.shape[1];
    for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto& s = data.samples[idx[r]];
        std::fprintf(f, "%d\t%d\t", s.id, s.cam);
        for (std::size_t j = 0; j < d; ++j) {
            std::fprintf(f, "%s%.9g", j ? "," : "", static_cast<double>(emb.data[r * d + j]));
        }
        std::fputc('\n', f);
    }
    std::fclose(f);
    std::printf("wrote %zu embeddings of dimension %zu to %s\n", idx.size(), d, out.c_str());
}

void cmd_project(const LoadedConfig& lc, const std::string& space, const std::string& ck_path,
                 bool fresh, std::string out) {
    const RunConfig& cfg = lc.cfg;
    DatasetManifest data = svll::load_dataset(cfg);
    System sys = svll::build_system(cfg, data.n_identities);

    Matrix feats;
    std::vector<int> ids;
    std::string tag;
    if (space == "text") {
        if (fresh) {
            tag = "untrained";
            feats = rows_of(svll::compute_id_text_features(sys.tmpl, sys.bank, sys.text));
        } else {
            const std::string path = ck_path.empty() ? artifact(cfg, "stage1.ckpt") : ck_path;
            Checkpoint ck = svll::load_checkpoint(path);
            tag = ck.stage;
            feats = rows_of(ck.require("id_text"));
        }
        for (std::size_t i = 0; i < feats.size(); ++i) ids.push_back(static_cast<int>(i));
    } else {
        tag = prepare_system(sys, cfg, ck_path, fresh);
        std::vector<std::size_t> idx = data.indices(Split::query);
        for (std::size_t i : data.indices(Split::gallery)) idx.push_back(i);
        feats = rows_of(svll::embed_images(sys.image, data, idx));
        for (std::size_t i : idx) ids.push_back(data.samples[i].id);
    }

    const auto coords = svll::pca_project_2d(feats);
    if (out.empty()) out = artifact(cfg, "project_" + space + ".csv");
    fs::create_directories(fs::path(out).parent_path().empty() ? "." : fs::path(out).parent_path());
    svll::write_projection_csv(out, coords, ids, std::vector<std::string>(ids.size(), tag));
    std::printf("wrote %zu projected %s features (weights: %s) to %s\n", coords.size(), space.c_str(),
                tag.c_str(), out.c_str());

    if (space == "image") {
        Matrix pts(coords.size(), std::vector<double>(2));
        for (std::size_t i = 0; i < coords.size(); ++i) pts[i] = {coords[i][0], coords[i][1]};
        std::printf("2-D intra/inter distance ratio: %.4f\n", svll::cluster_ratio(pts, ids));
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-stage vision-language re-identification workbench"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    app.add_option("-c,--config", config_path, "JSON config file (defaults apply without one)");
    app.add_option("-s,--set", overrides, "dotted config override, e.g. stage1.lambda_lss=0")
        ->type_size(1);

    CLI::App* sc_show = app.add_subcommand("show-config", "print the resolved config and its digest");

    CLI::App* sc_gen = app.add_subcommand("gen-data", "render the synthetic dataset to disk");
    std::string gen_out;
    sc_gen->add_option("--out", gen_out, "target directory (default <out_dir>/data)");

    CLI::App* sc_train = app.add_subcommand("train", "run one training stage");
    int stage = 0;
    bool resume = false;
    sc_train->add_option("--stage", stage, "1: prompt tokens, 2: image encoder")
        ->required()
        ->check(CLI::Range(1, 2));
    sc_train->add_flag("--resume", resume, "continue from this stage's checkpoint");

    CLI::App* sc_eval = app.add_subcommand("eval", "score query-vs-gallery retrieval");
    std::string eval_ck, eval_out;
    bool eval_fresh = false;
    sc_eval->add_option("--checkpoint", eval_ck, "weights to load (default <out_dir>/stage2.ckpt)");
    sc_eval->add_flag("--fresh", eval_fresh, "evaluate the untrained initialization");
    sc_eval->add_option("--out", eval_out, "report path (default <out_dir>/eval.json)");

    CLI::App* sc_embed = app.add_subcommand("embed", "dump image embeddings for one split");
    std::string embed_split = "query", embed_ck, embed_out;
    bool embed_fresh = false;
    sc_embed->add_option("--split", embed_split, "train|query|gallery (default query)")
        ->check(CLI::IsMember({"train", "query", "gallery"}));
    sc_embed->add_option("--checkpoint", embed_ck, "weights to load (default <out_dir>/stage2.ckpt)");
    sc_embed->add_flag("--fresh", embed_fresh, "use the untrained initialization");
    sc_embed->add_option("--out", embed_out, "output path (default <out_dir>/embed_<split>.tsv)");

    CLI::App* sc_project = app.add_subcommand("project", "2-D PCA scatter of learned features");
    std::string project_space, project_ck, project_out;
    bool project_fresh = false;
    sc_project->add_option("--space", project_space, "text: per-identity features, image: embeddings")
        ->required()
        ->check(CLI::IsMember({"text", "image"}));
    sc_project
        ->add_option("--checkpoint", project_ck,
                     "weights to load (default <out_dir>/stage1.ckpt for text, stage2.ckpt for image)")
        ->expected(1);
    sc_project->add_flag("--fresh", project_fresh, "use the untrained initialization");
    sc_project->add_option("--out", project_out, "output path (default <out_dir>/project_<space>.csv)");

    for (CLI::App* sc : {sc_show, sc_gen, sc_train, sc_eval, sc_embed, sc_project}) sc->fallthrough();

    CLI11_PARSE(app, argc, argv);

    try {
        LoadedConfig lc = svll::resolve_config(config_path, overrides);
        echo_config(lc);
        if (sc_gen->parsed()) cmd_gen_data(lc, gen_out);
        if (sc_train->parsed()) cmd_train(lc, stage, resume);
        if (sc_eval->parsed()) cmd_eval(lc, eval_ck, eval_fresh, eval_out);
        if (sc_embed->parsed()) cmd_embed(lc, embed_split, embed_ck, embed_fresh, embed_out);
        if (sc_project->parsed()) cmd_project(lc, project_space, project_ck, project_fresh, project_out);
    } catch (const std::exception& e) {
        svll::log_error(e.what());
        return 1;
    }
    return 0;
}
