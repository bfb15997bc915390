#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "svll/config.hpp"
#include "svll/serialize.hpp"

using svll::build_system;
using svll::Checkpoint;
using svll::load_dataset;
using svll::LoadedConfig;
using svll::resolve_config;
using svll::restore_system;
using svll::RunConfig;
using svll::System;

namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const char* leaf) {
    fs::path p = fs::temp_directory_path() / "svll_config_tests" / leaf;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("defaults resolve and are stable") {
    LoadedConfig a = resolve_config("", {});
    LoadedConfig b = resolve_config("", {});
    CHECK(a.canonical == b.canonical);
    CHECK(a.digest == b.digest);
    CHECK(a.digest.size() == 64);

    const RunConfig& c = a.cfg;
    CHECK(c.seed == 1);
    CHECK(c.dataset_source == "synthetic");
    CHECK(c.synthetic.n_identities == 20);
    CHECK(c.synthetic.occlusion == doctest::Approx(0.4));
    CHECK(c.stage1.epochs == 60);
    CHECK(c.stage1.lr == 3.5e-4);
    CHECK(c.stage1.alpha == 0.5);
    CHECK(c.stage1.lambda_lss == 0.8);
    CHECK(c.stage2.p == 16);
    CHECK(c.stage2.k == 4);
    CHECK(c.stage2.schedule.start == 5e-7);
    CHECK(c.stage2.schedule.peak == 5e-6);
    CHECK(c.stage2.schedule.warmup_epochs == 10);
    CHECK(c.stage2.schedule.decay_epochs == std::vector<int>{30, 50});
    CHECK(c.stage2.beta == 1.0 / 3.0);
    CHECK(c.stage2.margin == 0.3);
    CHECK(c.stage2.eps == 0.1);
    CHECK(c.stage2.pair_from_same_image == false);
    CHECK(c.eval_max_rank == 10);
}

TEST_CASE("seed feeds every stage") {
    LoadedConfig l = resolve_config("", {"seed=42"});
    CHECK(l.cfg.seed == 42);
    CHECK(l.cfg.synthetic.seed == 42);
    CHECK(l.cfg.stage1.seed == 42);
    CHECK(l.cfg.stage2.seed == 42);
}

TEST_CASE("overrides change values and the digest") {
    LoadedConfig base = resolve_config("", {});
    LoadedConfig mod = resolve_config("", {"stage1.lambda_lss=0", "out_dir=runs/ab", "seed=7"});
    CHECK(mod.cfg.stage1.lambda_lss == 0.0);
    CHECK(mod.cfg.out_dir == "runs/ab");
    CHECK(mod.cfg.seed == 7);
    CHECK(mod.digest != base.digest);

    LoadedConfig again = resolve_config("", {"stage1.lambda_lss=0", "out_dir=runs/ab", "seed=7"});
    CHECK(again.digest == mod.digest);
    CHECK(again.canonical == mod.canonical);
}

TEST_CASE("override value forms") {
    CHECK(resolve_config("", {"out_dir=plain_word"}).cfg.out_dir == "plain_word");
    CHECK(resolve_config("", {"out_dir=\"quoted word\""}).cfg.out_dir == "quoted word");
    CHECK(resolve_config("", {"stage2.pair_from_same_image=true"}).cfg.stage2.pair_from_same_image);
    CHECK(resolve_config("", {"stage2.decay_epochs=[2,4]"}).cfg.stage2.schedule.decay_epochs ==
          std::vector<int>{2, 4});
    CHECK(resolve_config("", {"stage2.lr_scale=250"}).cfg.stage2.lr_scale == 250.0);
}

TEST_CASE("bad overrides are rejected") {
    CHECK_THROWS_AS(resolve_config("", {"no_equals"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"=5"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"stage1.typo=1"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"stage9.lr=1"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"stage1=1"}), std::invalid_argument);        // section
    CHECK_THROWS_AS(resolve_config("", {"stage1.lr=fast"}), std::invalid_argument);  // type change
    CHECK_THROWS_AS(resolve_config("", {"out_dir=3"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"stage1.epochs=-3"}), std::invalid_argument);
}

TEST_CASE("config files merge over defaults") {
    fs::path dir = scratch_dir("files");
    fs::path good = dir / "good.json";
    std::ofstream(good) << R"({"stage1": {"epochs": 3}, "dataset": {"synthetic": {"identities": 5}}})";

    LoadedConfig l = resolve_config(good.string(), {});
    CHECK(l.cfg.stage1.epochs == 3);
    CHECK(l.cfg.synthetic.n_identities == 5);
    CHECK(l.cfg.stage2.epochs == 60);  // untouched sections keep defaults

    // overrides apply after the file
    CHECK(resolve_config(good.string(), {"stage1.epochs=9"}).cfg.stage1.epochs == 9);

    fs::path unknown = dir / "unknown.json";
    std::ofstream(unknown) << R"({"stage1": {"epoch": 3}})";
    CHECK_THROWS_AS(resolve_config(unknown.string(), {}), std::invalid_argument);

    fs::path null_val = dir / "null.json";
    std::ofstream(null_val) << R"({"out_dir": null})";
    CHECK_THROWS_AS(resolve_config(null_val.string(), {}), std::invalid_argument);

    fs::path not_obj = dir / "arr.json";
    std::ofstream(not_obj) << "[1,2]";
    CHECK_THROWS_AS(resolve_config(not_obj.string(), {}), std::invalid_argument);

    fs::path bad_syntax = dir / "bad.json";
    std::ofstream(bad_syntax) << "{nope";
    CHECK_THROWS(resolve_config(bad_syntax.string(), {}));

    CHECK_THROWS_AS(resolve_config((dir / "missing.json").string(), {}), std::runtime_error);
}

TEST_CASE("structural validation") {
    CHECK_THROWS_AS(resolve_config("", {"dataset.source=csv"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"dataset.source=dir"}), std::invalid_argument);  // dir unset
    CHECK(resolve_config("", {"dataset.source=dir", "dataset.dir=/tmp/x"}).cfg.dataset_dir == "/tmp/x");
    CHECK_THROWS_AS(resolve_config("", {"model.image.d_embed=16"}), std::invalid_argument);
    CHECK_THROWS_AS(resolve_config("", {"eval.max_rank=0"}), std::invalid_argument);
}

TEST_CASE("build_system is deterministic in the config seed") {
    RunConfig cfg = resolve_config("", {}).cfg;
    System a = build_system(cfg, 6);
    System b = build_system(cfg, 6);
    CHECK(svll::params_digest(a.text.params()) == svll::params_digest(b.text.params()));
    CHECK(svll::params_digest(a.image.params()) == svll::params_digest(b.image.params()));
    CHECK(a.bank.tokens.value.data == b.bank.tokens.value.data);
    CHECK(a.vocab.size() == b.vocab.size());
    CHECK(a.tmpl.slots() == cfg.m_tokens);
    CHECK(a.text.config().vocab_size == a.vocab.size());

    RunConfig other = resolve_config("", {"seed=2"}).cfg;
    System c = build_system(other, 6);
    CHECK(svll::params_digest(a.image.params()) != svll::params_digest(c.image.params()));
    CHECK(a.bank.tokens.value.data != c.bank.tokens.value.data);

    CHECK_THROWS_AS(build_system(cfg, 0), std::invalid_argument);
    RunConfig tight = resolve_config("", {"model.text.context=4"}).cfg;
    CHECK_THROWS_AS(build_system(tight, 6), std::invalid_argument);
}

TEST_CASE("restore_system round trips weights through a checkpoint") {
    RunConfig cfg = resolve_config("", {"seed=5"}).cfg;
    System src = build_system(cfg, 4);

    Checkpoint ck;
    ck.config_digest = "d";
    ck.stage = "stage1";
    ck.blobs.emplace_back(src.bank.tokens.name, src.bank.tokens.value);
    for (auto* p : src.text.params()) ck.blobs.emplace_back(p->name, p->value);
    for (auto* p : src.image.params()) ck.blobs.emplace_back(p->name, p->value);

    System dst = build_system(resolve_config("", {"seed=6"}).cfg, 4);
    CHECK(svll::params_digest(dst.image.params()) != svll::params_digest(src.image.params()));
    restore_system(dst, ck);
    CHECK(svll::params_digest(dst.image.params()) == svll::params_digest(src.image.params()));
    CHECK(svll::params_digest(dst.text.params()) == svll::params_digest(src.text.params()));
    CHECK(dst.bank.tokens.value.data == src.bank.tokens.value.data);

    // a checkpoint from a different geometry cannot be restored
    System wide = build_system(resolve_config("", {"model.image.d_model=16", "model.text.d_word=16"}).cfg, 4);
    CHECK_THROWS(restore_system(wide, ck));

    Checkpoint incomplete = ck;
    incomplete.blobs.pop_back();
    CHECK_THROWS(restore_system(dst, incomplete));
}

TEST_CASE("load_dataset follows the config") {
    RunConfig cfg = resolve_config("", {"dataset.synthetic.identities=3", "dataset.synthetic.train_per_id=2",
                                        "dataset.synthetic.query_per_id=1",
                                        "dataset.synthetic.gallery_per_id=1", "dataset.synthetic.height=16",
                                        "dataset.synthetic.width=8"})
                        .cfg;
    svll::DatasetManifest a = load_dataset(cfg);
    CHECK(a.n_identities == 3);
    CHECK(a.samples.size() == 3 * (2 + 1 + 1));
    CHECK(a.has_images());

    svll::DatasetManifest b = load_dataset(cfg);
    CHECK(a.images[0].pixels == b.images[0].pixels);

    RunConfig reseeded = cfg;
    reseeded.seed = 9;
    reseeded.synthetic.seed = 1;  // load_dataset must override this from the run seed
    svll::DatasetManifest c = load_dataset(reseeded);
    CHECK(a.images[0].pixels != c.images[0].pixels);
}
