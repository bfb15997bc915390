#include "svll/config.hpp"

#include <fstream>
#include <stdexcept>

#include "json.hpp"
#include "svll/serialize.hpp"

namespace svll {

namespace {

using nlohmann::json;

json default_json() {
    json j;
    j["seed"] = 1;
    j["out_dir"] = "runs/default";
    j["dataset"]["source"] = "synthetic";
    j["dataset"]["dir"] = "";
    j["dataset"]["synthetic"] = {{"identities", 20}, {"train_per_id", 8},  {"query_per_id", 4},
                                 {"gallery_per_id", 8}, {"cameras", 2},    {"height", 64},
                                 {"width", 32},        {"clutter", 0.5},   {"illumination", 0.3},
                                 {"occlusion", 0.4}};
    j["model"]["text"] = {{"d_word", 32}, {"d_embed", 32}, {"layers", 2},
                          {"heads", 2},   {"context", 16}, {"mlp_hidden", 0}};
    j["model"]["image"] = {{"height", 64}, {"width", 32},  {"patch", 8}, {"d_model", 32},
                           {"d_embed", 32}, {"layers", 2}, {"heads", 2}, {"mlp_hidden", 0}};
    j["model"]["prompt"] = {{"m_tokens", 4}, {"prefix", "a photo of a"}, {"suffix", "person"}};
    j["stage1"] = {{"epochs", 60}, {"batch", 64},       {"lr", 3.5e-4},
                   {"alpha", 0.5}, {"lambda_lss", 0.8}, {"tau", 0.07}};
    j["stage2"] = {{"epochs", 60},
                   {"p", 16},
                   {"k", 4},
                   {"lr_start", 5e-7},
                   {"lr_peak", 5e-6},
                   {"warmup_epochs", 10},
                   {"decay_epochs", json::array({30, 50})},
                   {"decay_factor", 0.1},
                   {"lr_scale", 1.0},
                   {"beta", 1.0 / 3.0},
                   {"lambda_vss", 0.8},
                   {"tau", 0.07},
                   {"margin", 0.3},
                   {"eps", 0.1},
                   {"pair_from_same_image", false}};
    j["eval"] = {{"max_rank", 10}};
    return j;
}

// Every key in `given` must exist in `defaults`; sections must stay
// sections and nulls are rejected (merge_patch would delete the key).
void check_known(const json& defaults, const json& given, const std::string& path) {
    for (auto it = given.begin(); it != given.end(); ++it) {
        const std::string p = path.empty() ? it.key() : path + "." + it.key();
        if (!defaults.contains(it.key())) throw std::invalid_argument("config: unknown key " + p);
        if (it->is_null()) throw std::invalid_argument("config: null value for " + p);
        const json& d = defaults.at(it.key());
        if (d.is_object() != it->is_object()) {
            throw std::invalid_argument("config: wrong structure for " + p);
        }
        if (it->is_object()) check_known(d, *it, p);
    }
}

void apply_override(json& j, const std::string& kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
        throw std::invalid_argument("--set expects key=value, got \"" + kv + "\"");
    }
    std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);

    std::string ptr_path = "/" + key;
    for (auto& c : ptr_path) {
        if (c == '.') c = '/';
    }
    const json::json_pointer ptr(ptr_path);
    if (!j.contains(ptr)) throw std::invalid_argument("--set: unknown config key " + key);
    const json& cur = j.at(ptr);
    if (cur.is_object()) throw std::invalid_argument("--set: " + key + " is a section, not a value");

    json val;
    try {
        val = json::parse(raw);
    } catch (const json::parse_error&) {
        val = raw;  // bare words are strings
    }
    const bool compatible = (cur.is_number() && val.is_number()) ||
                            (cur.is_string() && val.is_string()) ||
                            (cur.is_boolean() && val.is_boolean()) ||
                            (cur.is_array() && val.is_array());
    if (!compatible) {
        throw std::invalid_argument("--set: value for " + key + " must be of type " +
                                    std::string(cur.type_name()));
    }
    j[ptr] = val;
}

std::size_t checked_usize(const json& v, const std::string& what) {
    if (v.is_number_unsigned()) return v.get<std::size_t>();
    if (v.is_number_integer() && v.get<long long>() >= 0) {
        return static_cast<std::size_t>(v.get<long long>());
    }
    throw std::invalid_argument("config: " + what + " must be a non-negative integer");
}

std::size_t usize(const json& sec, const char* key, const std::string& where) {
    return checked_usize(sec.at(key), where + "." + std::string(key));
}

double fnum(const json& sec, const char* key, const std::string& where) {
    const json& v = sec.at(key);
    if (!v.is_number()) throw std::invalid_argument("config: " + where + "." + key + " must be a number");
    return v.get<double>();
}

RunConfig parse(const json& j) {
    RunConfig c;
    c.seed = usize(j, "seed", "");
    c.out_dir = j.at("out_dir").get<std::string>();

    const json& ds = j.at("dataset");
    c.dataset_source = ds.at("source").get<std::string>();
    if (c.dataset_source != "synthetic" && c.dataset_source != "dir") {
        throw std::invalid_argument("config: dataset.source must be \"synthetic\" or \"dir\"");
    }
    c.dataset_dir = ds.at("dir").get<std::string>();
    if (c.dataset_source == "dir" && c.dataset_dir.empty()) {
        throw std::invalid_argument("config: dataset.dir is required when dataset.source is \"dir\"");
    }
    const json& sy = ds.at("synthetic");
    c.synthetic.n_identities = usize(sy, "identities", "dataset.synthetic");
    c.synthetic.train_per_id = usize(sy, "train_per_id", "dataset.synthetic");
    c.synthetic.query_per_id = usize(sy, "query_per_id", "dataset.synthetic");
    c.synthetic.gallery_per_id = usize(sy, "gallery_per_id", "dataset.synthetic");
    c.synthetic.cameras = usize(sy, "cameras", "dataset.synthetic");
    c.synthetic.height = usize(sy, "height", "dataset.synthetic");
    c.synthetic.width = usize(sy, "width", "dataset.synthetic");
    c.synthetic.clutter = fnum(sy, "clutter", "dataset.synthetic");
    c.synthetic.illumination = fnum(sy, "illumination", "dataset.synthetic");
    c.synthetic.occlusion = fnum(sy, "occlusion", "dataset.synthetic");
    c.synthetic.seed = c.seed;

    const json& tx = j.at("model").at("text");
    c.text.d_word = usize(tx, "d_word", "model.text");
    c.text.d_embed = usize(tx, "d_embed", "model.text");
    c.text.layers = usize(tx, "layers", "model.text");
    c.text.heads = usize(tx, "heads", "model.text");
    c.text.context = usize(tx, "context", "model.text");
    c.text.mlp_hidden = usize(tx, "mlp_hidden", "model.text");

    const json& im = j.at("model").at("image");
    c.image.height = usize(im, "height", "model.image");
    c.image.width = usize(im, "width", "model.image");
    c.image.patch = usize(im, "patch", "model.image");
    c.image.d_model = usize(im, "d_model", "model.image");
    c.image.d_embed = usize(im, "d_embed", "model.image");
    c.image.layers = usize(im, "layers", "model.image");
    c.image.heads = usize(im, "heads", "model.image");
    c.image.mlp_hidden = usize(im, "mlp_hidden", "model.image");
    if (c.text.d_embed != c.image.d_embed) {
        throw std::invalid_argument("config: model.text.d_embed and model.image.d_embed must match");
    }

    const json& pr = j.at("model").at("prompt");
    c.m_tokens = usize(pr, "m_tokens", "model.prompt");
    c.prompt_prefix = pr.at("prefix").get<std::string>();
    c.prompt_suffix = pr.at("suffix").get<std::string>();

    const json& s1 = j.at("stage1");
    c.stage1.epochs = usize(s1, "epochs", "stage1");
    c.stage1.batch = usize(s1, "batch", "stage1");
    c.stage1.lr = fnum(s1, "lr", "stage1");
    c.stage1.alpha = fnum(s1, "alpha", "stage1");
    c.stage1.lambda_lss = fnum(s1, "lambda_lss", "stage1");
    c.stage1.tau = fnum(s1, "tau", "stage1");
    c.stage1.seed = c.seed;

    const json& s2 = j.at("stage2");
    c.stage2.epochs = usize(s2, "epochs", "stage2");
    c.stage2.p = usize(s2, "p", "stage2");
    c.stage2.k = usize(s2, "k", "stage2");
    c.stage2.schedule.start = fnum(s2, "lr_start", "stage2");
    c.stage2.schedule.peak = fnum(s2, "lr_peak", "stage2");
    c.stage2.schedule.warmup_epochs = static_cast<int>(usize(s2, "warmup_epochs", "stage2"));
    c.stage2.schedule.decay_epochs.clear();
    for (const json& d : s2.at("decay_epochs")) {
        c.stage2.schedule.decay_epochs.push_back(
            static_cast<int>(checked_usize(d, "stage2.decay_epochs entry")));
    }
    c.stage2.schedule.decay_factor = fnum(s2, "decay_factor", "stage2");
    c.stage2.lr_scale = fnum(s2, "lr_scale", "stage2");
    c.stage2.beta = fnum(s2, "beta", "stage2");
    c.stage2.lambda_vss = fnum(s2, "lambda_vss", "stage2");
    c.stage2.tau = fnum(s2, "tau", "stage2");
    c.stage2.margin = fnum(s2, "margin", "stage2");
    c.stage2.eps = fnum(s2, "eps", "stage2");
    c.stage2.pair_from_same_image = s2.at("pair_from_same_image").get<bool>();
    c.stage2.seed = c.seed;

    c.eval_max_rank = usize(j.at("eval"), "max_rank", "eval");
    if (c.eval_max_rank == 0) throw std::invalid_argument("config: eval.max_rank must be positive");
    return c;
}

}  // namespace

LoadedConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    json j = default_json();
    if (!config_path.empty()) {
        std::ifstream in(config_path);
        if (!in) throw std::runtime_error("config: cannot open " + config_path);
        json given = json::parse(in);
        if (!given.is_object()) throw std::invalid_argument("config: top level must be an object");
        check_known(j, given, "");
        j.merge_patch(given);
    }
    for (const auto& kv : overrides) apply_override(j, kv);

    LoadedConfig out;
    out.cfg = parse(j);
    out.canonical = j.dump();
    out.digest = Sha256::hex(out.canonical);
    return out;
}

System build_system(const RunConfig& cfg, std::size_t n_identities) {
    if (n_identities == 0) throw std::invalid_argument("build_system: no identities");
    System s;
    s.tmpl = PromptTemplate::build(s.vocab, cfg.prompt_prefix, cfg.prompt_suffix, cfg.m_tokens);
    if (s.tmpl.length() > cfg.text.context) {
        throw std::invalid_argument("config: prompt template length " + std::to_string(s.tmpl.length()) +
                                    " exceeds model.text.context " + std::to_string(cfg.text.context));
    }
    TextEncoderConfig tc = cfg.text;
    tc.vocab_size = s.vocab.size();
    Rng text_rng = Rng::substream(cfg.seed, 21);
    s.text = TextEncoder<float>(tc, text_rng);
    Rng bank_rng = Rng::substream(cfg.seed, 22);
    s.bank = PromptBank<float>(n_identities, cfg.m_tokens, cfg.text.d_word, bank_rng);
    Rng image_rng = Rng::substream(cfg.seed, 23);
    s.image = ImageEncoder<float>(cfg.image, image_rng);
    return s;
}

void restore_system(System& sys, const Checkpoint& ck) {
    auto assign = [&](Parameter<float>& p) {
        const Tensor<float>& t = ck.require(p.name);
        if (t.shape != p.value.shape) {
            throw std::runtime_error("checkpoint: shape mismatch for " + p.name);
        }
        p.value = t;
    };
    assign(sys.bank.tokens);
    for (Parameter<float>* p : sys.text.params()) assign(*p);
    for (Parameter<float>* p : sys.image.params()) assign(*p);
}

DatasetManifest load_dataset(const RunConfig& cfg) {
    if (cfg.dataset_source == "synthetic") {
        SyntheticSpec spec = cfg.synthetic;
        spec.seed = cfg.seed;
        return generate_synthetic(spec);
    }
    DatasetManifest m = parse_reid_dir(cfg.dataset_dir);
    load_images(m);
    return m;
}

}  // namespace svll
