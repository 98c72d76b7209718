// Command-line front door: gen-data, train, eval, ablate, export-latents.
//
// Every command reads a flat JSON config (--config), applies CGDL_<KEY>
// environment overrides, then flag overrides (--seed, --out, --set KEY=VALUE).
// Later sources win; any override of an explicitly-set key is reported on
// stderr, never applied silently. Unknown keys are rejected. The fully
// resolved config is echoed into every output artifact next to the tool
// version.
//
// Exit codes: 0 success, 1 internal error, 2 configuration error, 3 I/O or
// data-format error, 4 numeric/calibration failure, 5 checkpoint error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "cgdl/ablation.hpp"
#include "cgdl/checkpoint.hpp"
#include "cgdl/dataset.hpp"
#include "cgdl/detector.hpp"
#include "cgdl/errors.hpp"
#include "cgdl/metrics.hpp"
#include "cgdl/trainer.hpp"
#include "cgdl/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

using namespace cgdl;

// ---------------------------------------------------------------------------
// formatting helpers
// ---------------------------------------------------------------------------

std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string quoted = "\"";
    for (char c : s) {
        if (c == '"') quoted += "\"\"";
        else quoted += c;
    }
    quoted += "\"";
    return quoted;
}

// ---------------------------------------------------------------------------
// config schema + resolution
// ---------------------------------------------------------------------------

enum class KeyType { boolean, uint, u64, dbl, str, uint_list, dbl_list, str_list, u64_list };

struct Schema {
    std::string command;
    std::vector<std::string> keys;  // declaration order
    std::map<std::string, KeyType> types;
    json defaults = json::object();

    void add(const std::string& key, KeyType type, json def) {
        keys.push_back(key);
        types[key] = type;
        defaults[key] = std::move(def);
    }
    bool has(const std::string& key) const { return types.count(key) != 0; }
    std::string key_list() const {
        std::string out;
        for (const auto& k : keys) {
            if (!out.empty()) out += ", ";
            out += k;
        }
        return out;
    }
};

bool is_nonneg_int(const json& v) {
    return v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0);
}

json coerce(const Schema& schema, const std::string& key, const json& raw,
            const std::string& source) {
    const KeyType type = schema.types.at(key);
    const auto fail = [&](const char* want) {
        throw config_error("config key '" + key + "' from " + source + " must be " + want +
                           ", got " + raw.dump());
    };
    switch (type) {
        case KeyType::boolean:
            if (raw.is_boolean()) return raw;
            if (is_nonneg_int(raw) && raw.get<long long>() <= 1) return raw.get<long long>() == 1;
            fail("a boolean");
            break;
        case KeyType::uint:
        case KeyType::u64:
            if (is_nonneg_int(raw)) return raw.get<std::uint64_t>();
            fail("a non-negative integer");
            break;
        case KeyType::dbl:
            if (raw.is_number()) return raw.get<double>();
            fail("a number");
            break;
        case KeyType::str:
            if (raw.is_string()) return raw;
            fail("a string");
            break;
        case KeyType::uint_list:
        case KeyType::u64_list: {
            if (!raw.is_array()) fail("an array of non-negative integers");
            json out = json::array();
            for (const json& e : raw) {
                if (!is_nonneg_int(e)) fail("an array of non-negative integers");
                out.push_back(e.get<std::uint64_t>());
            }
            return out;
        }
        case KeyType::dbl_list: {
            if (!raw.is_array()) fail("an array of numbers");
            json out = json::array();
            for (const json& e : raw) {
                if (!e.is_number()) fail("an array of numbers");
                out.push_back(e.get<double>());
            }
            return out;
        }
        case KeyType::str_list: {
            if (!raw.is_array()) fail("an array of strings");
            for (const json& e : raw)
                if (!e.is_string()) fail("an array of strings");
            return raw;
        }
    }
    fail("a supported type");
    return {};
}

struct ResolvedConfig {
    json values = json::object();
    std::map<std::string, std::string> origin;  // key -> default/file/environment/flag

    std::string dump() const { return values.dump(); }
};

void apply_value(const Schema& schema, ResolvedConfig& rc, const std::string& key, const json& raw,
                 const std::string& source) {
    if (!schema.has(key))
        throw config_error("unknown config key '" + key + "' for command '" + schema.command +
                           "'; valid keys: " + schema.key_list());
    const json value = coerce(schema, key, raw, source);
    const std::string prev_origin = rc.origin.count(key) ? rc.origin.at(key) : "default";
    if (prev_origin != "default" && rc.values[key] != value) {
        std::cerr << "note: config key '" << key << "' set to " << rc.values[key].dump() << " by "
                  << prev_origin << " is overridden to " << value.dump() << " by " << source
                  << "\n";
    }
    rc.values[key] = value;
    rc.origin[key] = source;
}

json parse_text_value(const Schema& schema, const std::string& key, const std::string& text,
                      const std::string& source) {
    if (!schema.has(key))
        throw config_error("unknown config key '" + key + "' for command '" + schema.command +
                           "'; valid keys: " + schema.key_list());
    if (schema.types.at(key) == KeyType::str) return text;
    json parsed = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_discarded())
        throw config_error("could not parse value '" + text + "' for config key '" + key +
                           "' from " + source);
    return parsed;
}

std::string env_name_for(const std::string& key) {
    std::string name = "CGDL_";
    for (char c : key) name += (c == '-') ? '_' : static_cast<char>(std::toupper(c));
    return name;
}

struct CommonFlags {
    std::string config_path;
    std::vector<std::string> overrides;  // KEY=VALUE
    std::uint64_t seed = 0;
    std::string out;
    CLI::Option* seed_opt = nullptr;
    CLI::Option* out_opt = nullptr;
};

std::shared_ptr<CommonFlags> add_common_flags(CLI::App* sub) {
    auto cf = std::make_shared<CommonFlags>();
    sub->add_option("--config", cf->config_path, "JSON config file (flat object)");
    sub->add_option("--set", cf->overrides, "KEY=VALUE config override (repeatable)");
    cf->seed_opt = sub->add_option("--seed", cf->seed, "seed override");
    cf->out_opt = sub->add_option("--out", cf->out, "output directory override");
    return cf;
}

ResolvedConfig resolve_config(const Schema& schema, const CommonFlags& cf) {
    ResolvedConfig rc;
    rc.values = schema.defaults;

    // 1. config file
    if (!cf.config_path.empty()) {
        std::ifstream in(cf.config_path);
        if (!in) throw io_error("cannot open config file '" + cf.config_path + "'");
        json file = json::parse(in, nullptr, /*allow_exceptions=*/false);
        if (file.is_discarded())
            throw config_error("config file '" + cf.config_path + "' is not valid JSON");
        if (!file.is_object())
            throw config_error("config file '" + cf.config_path + "' must hold a JSON object");
        for (const auto& [key, value] : file.items())
            apply_value(schema, rc, key, value, "config file");
    }

    // 2. environment (CGDL_THREADS is a parallelism cap, not a key override,
    //    so 'threads' is excluded here and handled by the ablate command)
    for (const std::string& key : schema.keys) {
        if (key == "threads") continue;
        const char* env = std::getenv(env_name_for(key).c_str());
        if (env == nullptr) continue;
        const std::string source = "environment (" + env_name_for(key) + ")";
        apply_value(schema, rc, key, parse_text_value(schema, key, env, source), source);
    }

    // 3. flags
    if (cf.seed_opt->count() > 0) {
        if (schema.has("seed")) {
            apply_value(schema, rc, "seed", json(cf.seed), "flag --seed");
        } else if (schema.has("seeds")) {
            apply_value(schema, rc, "seeds", json::array({cf.seed}), "flag --seed");
        } else {
            throw config_error("command '" + schema.command + "' takes no seed");
        }
    }
    if (cf.out_opt->count() > 0) apply_value(schema, rc, "out", json(cf.out), "flag --out");
    for (const std::string& kv : cf.overrides) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0)
            throw config_error("--set expects KEY=VALUE, got '" + kv + "'");
        const std::string key = kv.substr(0, eq);
        const std::string text = kv.substr(eq + 1);
        const std::string source = "flag --set " + key;
        apply_value(schema, rc, key, parse_text_value(schema, key, text, source), source);
    }
    return rc;
}

// ---------------------------------------------------------------------------
// small shared helpers
// ---------------------------------------------------------------------------

std::string require_path(const ResolvedConfig& rc, const std::string& key) {
    const std::string value = rc.values.at(key).get<std::string>();
    if (value.empty()) throw config_error("config key '" + key + "' is required");
    return value;
}

fs::path ensure_out_dir(const ResolvedConfig& rc) {
    const fs::path dir = rc.values.at("out").get<std::string>();
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec && !fs::is_directory(dir))
        throw io_error("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

void write_text_file(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << content;
    if (!out) throw io_error("failed writing '" + path.string() + "'");
}

void write_json_file(const fs::path& path, const json& body) {
    write_text_file(path, body.dump(2) + "\n");
}

std::string artifact_comment(const ResolvedConfig& rc) {
    std::string s = "# tool ";
    s += kToolName;
    s += " ";
    s += kToolVersion;
    s += "\n# config ";
    s += rc.dump();
    s += "\n";
    return s;
}

std::vector<std::size_t> uint_list(const json& v) {
    std::vector<std::size_t> out;
    for (const json& e : v) out.push_back(e.get<std::size_t>());
    return out;
}

DetectorKind parse_detector_kind(const std::string& name) {
    if (name == "softmax_threshold" || name == "softmax") return DetectorKind::softmax_threshold;
    if (name == "cgd") return DetectorKind::cgd;
    if (name == "re") return DetectorKind::re;
    if (name == "cgd_and_re") return DetectorKind::cgd_and_re;
    throw config_error("unknown detector kind '" + name +
                       "'; valid kinds: softmax_threshold, cgd, re, cgd_and_re");
}

json label_histogram(const LabeledImageSet& set) {
    std::map<int, std::size_t> counts;
    for (int label : set.labels) ++counts[label];
    json out = json::object();
    for (const auto& [label, count] : counts) out[std::to_string(label)] = count;
    return out;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

const Schema& gen_data_schema() {
    static const Schema schema = [] {
        Schema s;
        s.command = "gen-data";
        s.add("kind", KeyType::str, "synthetic");  // synthetic | uniform-noise |
                                                   // noised-known | unseen-templates
        s.add("classes", KeyType::uint, 4);        // known classes / unseen classes
        s.add("per_class", KeyType::uint, 100);
        s.add("count", KeyType::uint, 200);  // total samples for outlier kinds
        s.add("image_side", KeyType::uint, 12);
        s.add("noise_sigma", KeyType::dbl, 0.1);
        s.add("template_offset", KeyType::uint, 0);
        s.add("known_classes", KeyType::uint, 4);  // template slots already taken
        s.add("noise_scale", KeyType::dbl, 0.5);
        s.add("base_images", KeyType::str, "");
        s.add("base_labels", KeyType::str, "");
        s.add("seed", KeyType::u64, 1);
        s.add("prefix", KeyType::str, "data");
        s.add("out", KeyType::str, ".");
        return s;
    }();
    return schema;
}

int cmd_gen_data(const CommonFlags& cf) {
    const ResolvedConfig rc = resolve_config(gen_data_schema(), cf);
    const json& v = rc.values;
    const std::string kind = v.at("kind").get<std::string>();

    LabeledImageSet base;
    bool has_base = false;
    const std::string base_images = v.at("base_images").get<std::string>();
    const std::string base_labels = v.at("base_labels").get<std::string>();
    if (!base_images.empty() || !base_labels.empty()) {
        if (base_images.empty() || base_labels.empty())
            throw config_error("base_images and base_labels must be given together");
        base = load_idx(base_images, base_labels);
        has_base = true;
    }

    LabeledImageSet set;
    if (kind == "synthetic") {
        SyntheticSpec spec;
        spec.num_classes = v.at("classes").get<std::size_t>();
        spec.per_class = v.at("per_class").get<std::size_t>();
        spec.image_side = v.at("image_side").get<std::size_t>();
        spec.noise_sigma = v.at("noise_sigma").get<double>();
        spec.seed = v.at("seed").get<std::uint64_t>();
        spec.template_offset = v.at("template_offset").get<std::size_t>();
        set = generate_synthetic(spec);
    } else {
        OutlierSpec spec;
        if (kind == "uniform-noise") spec.kind = OutlierKind::uniform_noise;
        else if (kind == "noised-known") spec.kind = OutlierKind::noised_known;
        else if (kind == "unseen-templates") spec.kind = OutlierKind::unseen_templates;
        else
            throw config_error("unknown kind '" + kind +
                               "'; valid kinds: synthetic, uniform-noise, noised-known, "
                               "unseen-templates");
        spec.count = v.at("count").get<std::size_t>();
        if (spec.count == 0) throw config_error("count must be positive for kind '" + kind + "'");
        spec.seed = v.at("seed").get<std::uint64_t>();
        spec.image_side = v.at("image_side").get<std::size_t>();
        spec.known_classes = v.at("known_classes").get<std::size_t>();
        spec.unseen_classes = v.at("classes").get<std::size_t>();
        spec.noise_scale = v.at("noise_scale").get<double>();
        spec.noise_sigma = v.at("noise_sigma").get<double>();
        set = make_outliers(spec, has_base ? &base : nullptr);
    }

    const fs::path dir = ensure_out_dir(rc);
    const std::string prefix = v.at("prefix").get<std::string>();
    const fs::path images_path = dir / (prefix + "-images-idx3-ubyte");
    const fs::path labels_path = dir / (prefix + "-labels-idx1-ubyte");
    write_idx(set, images_path.string(), labels_path.string());

    json manifest;
    manifest["tool"] = kToolName;
    manifest["tool_version"] = kToolVersion;
    manifest["kind"] = kind;
    manifest["count"] = set.size();
    manifest["height"] = set.height;
    manifest["width"] = set.width;
    manifest["label_counts"] = label_histogram(set);
    manifest["files"] = {{"images", images_path.filename().string()},
                         {"labels", labels_path.filename().string()}};
    manifest["config"] = rc.values;
    write_json_file(dir / (prefix + "-manifest.json"), manifest);

    std::cout << "gen-data: wrote " << set.size() << " images (" << set.height << "x" << set.width
              << ", " << manifest["label_counts"].size() << " distinct labels) to " << dir.string()
              << "/" << prefix << "-*\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

const Schema& train_schema() {
    static const Schema schema = [] {
        Schema s;
        s.command = "train";
        s.add("train_images", KeyType::str, "");
        s.add("train_labels", KeyType::str, "");
        s.add("classes", KeyType::uint, 0);  // 0 infers max label + 1
        s.add("layer_dims", KeyType::uint_list, json::array({48, 24}));
        s.add("latent_dim", KeyType::uint, 8);
        s.add("prelu_init", KeyType::dbl, 0.25);
        s.add("ladder", KeyType::boolean, true);
        s.add("plain_classifier", KeyType::boolean, false);
        s.add("epochs", KeyType::uint, 100);
        s.add("batch_size", KeyType::uint, 64);
        s.add("learning_rate", KeyType::dbl, 0.001);
        s.add("momentum", KeyType::dbl, 0.0);
        s.add("lambda", KeyType::dbl, 100.0);
        s.add("beta_anneal_epochs", KeyType::uint, 0);
        s.add("checkpoint_every", KeyType::uint, 0);
        s.add("fit_detector", KeyType::boolean, true);
        s.add("tau_l", KeyType::dbl, 0.5);
        s.add("tau_r_percentile", KeyType::dbl, 0.95);
        s.add("seed", KeyType::u64, 1);
        s.add("out", KeyType::str, ".");
        return s;
    }();
    return schema;
}

int cmd_train(const CommonFlags& cf) {
    const ResolvedConfig rc = resolve_config(train_schema(), cf);
    const json& v = rc.values;

    const LabeledImageSet data =
        load_idx(require_path(rc, "train_images"), require_path(rc, "train_labels"));
    if (data.size() == 0) throw config_error("training set is empty");

    std::size_t classes = v.at("classes").get<std::size_t>();
    int max_label = 0;
    for (int label : data.labels) max_label = std::max(max_label, label);
    if (classes == 0) classes = static_cast<std::size_t>(max_label) + 1;
    if (static_cast<std::size_t>(max_label) >= classes)
        throw config_error("label " + std::to_string(max_label) + " exceeds classes=" +
                           std::to_string(classes) + "; is this a known-class training set?");

    LadderConfig mc;
    mc.input_dim = data.image_pixels();
    mc.layer_dims = uint_list(v.at("layer_dims"));
    mc.latent_dim = v.at("latent_dim").get<std::size_t>();
    mc.num_classes = classes;
    mc.prelu_init = v.at("prelu_init").get<double>();
    mc.ladder_enabled = v.at("ladder").get<bool>();
    mc.validate();

    TrainConfig tc;
    tc.epochs = v.at("epochs").get<std::size_t>();
    tc.batch_size = v.at("batch_size").get<std::size_t>();
    tc.learning_rate = v.at("learning_rate").get<double>();
    tc.momentum = v.at("momentum").get<double>();
    tc.lambda = v.at("lambda").get<double>();
    tc.plain_classifier = v.at("plain_classifier").get<bool>();
    tc.beta_anneal_epochs = v.at("beta_anneal_epochs").get<std::size_t>();
    tc.checkpoint_every = v.at("checkpoint_every").get<std::size_t>();
    tc.seed = v.at("seed").get<std::uint64_t>();
    tc.validate();

    const fs::path dir = ensure_out_dir(rc);
    const std::uint64_t seed = tc.seed;
    LadderModel model(mc, seed);

    EpochCallback on_checkpoint;
    if (tc.checkpoint_every > 0) {
        on_checkpoint = [&](std::size_t epoch, LadderModel& m,
                            const std::vector<TrainLogEntry>&) {
            CheckpointMeta meta;
            meta.seed = seed;
            meta.epoch = epoch;
            meta.run_config_json = rc.dump();
            save_checkpoint((dir / ("checkpoint_epoch_" + std::to_string(epoch) + ".cgdl")).string(),
                            m, meta);
        };
    }

    const std::vector<TrainLogEntry> log = train(model, data, tc, on_checkpoint);

    CheckpointMeta meta;
    meta.seed = seed;
    meta.epoch = tc.epochs;
    meta.run_config_json = rc.dump();
    if (v.at("fit_detector").get<bool>()) {
        meta.has_detector = true;
        meta.thresholds.tau_l = v.at("tau_l").get<double>();
        meta.thresholds.tau_r =
            calibrate_tau_r(model, data, v.at("tau_r_percentile").get<double>());
        meta.gaussians = fit_class_gaussians(model, data);
    }
    const fs::path ckpt_path = dir / "checkpoint.cgdl";
    save_checkpoint(ckpt_path.string(), model, meta);

    std::string log_text = artifact_comment(rc);
    log_text += kTrainLogHeader;
    log_text += "\n";
    for (const TrainLogEntry& e : log) {
        log_text += train_log_csv_row(e);
        log_text += "\n";
    }
    write_text_file(dir / "train_log.csv", log_text);

    const TrainLogEntry& last = log.back();
    std::cout << "train: " << log.size() << " epochs, final total loss "
              << fmt_double(last.loss.total) << ", train accuracy "
              << fmt_double(last.closed_set_train_accuracy);
    if (meta.has_detector) std::cout << ", tau_r " << fmt_double(meta.thresholds.tau_r);
    std::cout << "\ntrain: wrote " << ckpt_path.string() << " and "
              << (dir / "train_log.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

const Schema& eval_schema() {
    static const Schema schema = [] {
        Schema s;
        s.command = "eval";
        s.add("checkpoint", KeyType::str, "");
        s.add("known_images", KeyType::str, "");
        s.add("known_labels", KeyType::str, "");
        s.add("unknown_images", KeyType::str, "");
        s.add("unknown_labels", KeyType::str, "");
        s.add("kind", KeyType::str, "cgd_and_re");
        s.add("tau_l", KeyType::dbl, -1.0);  // -1 keeps the checkpoint's threshold
        s.add("tau_r", KeyType::dbl, -1.0);  // -1 keeps the checkpoint's threshold
        s.add("unknown_class_count", KeyType::uint, 0);
        s.add("seed", KeyType::u64, 1);  // unused by the math; kept for artifact echo
        s.add("out", KeyType::str, ".");
        return s;
    }();
    return schema;
}

int cmd_eval(const CommonFlags& cf) {
    const ResolvedConfig rc = resolve_config(eval_schema(), cf);
    const json& v = rc.values;

    CheckpointMeta meta;
    const LadderModel model = load_checkpoint(require_path(rc, "checkpoint"), &meta);
    const std::size_t K = model.config().num_classes;

    const LabeledImageSet known =
        load_idx(require_path(rc, "known_images"), require_path(rc, "known_labels"));
    for (int label : known.labels)
        if (label < 0 || static_cast<std::size_t>(label) >= K)
            throw config_error("known-set label " + std::to_string(label) +
                               " is outside the checkpoint's 0.." + std::to_string(K - 1) +
                               " range");

    LabeledImageSet unknown;
    const std::string unknown_images = v.at("unknown_images").get<std::string>();
    const std::string unknown_labels = v.at("unknown_labels").get<std::string>();
    if (!unknown_images.empty() || !unknown_labels.empty()) {
        if (unknown_images.empty() || unknown_labels.empty())
            throw config_error("unknown_images and unknown_labels must be given together");
        unknown = load_idx(unknown_images, unknown_labels);
    }

    const DetectorKind kind = parse_detector_kind(v.at("kind").get<std::string>());
    DetectorThresholds thresholds = meta.thresholds;
    const double tau_l_override = v.at("tau_l").get<double>();
    const double tau_r_override = v.at("tau_r").get<double>();
    if (tau_l_override >= 0.0) thresholds.tau_l = tau_l_override;
    if (tau_r_override >= 0.0) thresholds.tau_r = tau_r_override;

    const bool needs_gaussians = kind == DetectorKind::cgd || kind == DetectorKind::cgd_and_re;
    const bool needs_tau_r = kind == DetectorKind::re || kind == DetectorKind::cgd_and_re;
    if (needs_gaussians && meta.gaussians.empty())
        throw checkpoint_error(
            "checkpoint carries no class gaussians; retrain with fit_detector=true or evaluate "
            "with kind=softmax_threshold or kind=re");
    if (needs_tau_r && !meta.has_detector && tau_r_override < 0.0)
        throw checkpoint_error(
            "checkpoint carries no calibrated tau_r; retrain with fit_detector=true or pass "
            "tau_r explicitly");

    const std::vector<Decision> known_dec =
        decide_batch(model, known, meta.gaussians, thresholds, kind);
    std::vector<Decision> decisions = known_dec;
    std::vector<int> truth = known.labels;
    if (unknown.size() > 0) {
        const std::vector<Decision> unknown_dec =
            decide_batch(model, unknown, meta.gaussians, thresholds, kind);
        decisions.insert(decisions.end(), unknown_dec.begin(), unknown_dec.end());
        truth.insert(truth.end(), unknown.size(), static_cast<int>(K));
    }

    const ConfusionCounts confusion = confusion_from_decisions(truth, decisions, K);
    const double f1 = macro_f1(confusion);
    const double closed_acc = closed_set_accuracy(model, known);

    std::size_t known_rejected = 0;
    for (std::size_t k = 0; k < K; ++k) known_rejected += confusion.at(k, K);
    const std::size_t unknown_rejected = confusion.at(K, K);

    const std::size_t unknown_class_count = v.at("unknown_class_count").get<std::size_t>();
    json openness_value;  // null when unknown classes are present but uncounted
    if (unknown.size() == 0) {
        openness_value = 0.0;
    } else if (unknown_class_count > 0) {
        openness_value = openness(K, K + unknown_class_count, K);
    }

    json report;
    report["tool"] = kToolName;
    report["tool_version"] = kToolVersion;
    report["config"] = rc.values;
    report["counts"] = {{"known", known.size()},
                        {"unknown", unknown.size()},
                        {"total", known.size() + unknown.size()}};
    report["closed_set_accuracy"] = closed_acc;
    report["macro_f1"] = f1;
    report["openness"] = openness_value;
    report["detector"] = {{"kind", v.at("kind").get<std::string>()},
                          {"tau_l", thresholds.tau_l},
                          {"tau_r", thresholds.tau_r}};
    report["rejection"] = {
        {"known_rejected", known_rejected},
        {"unknown_rejected", unknown_rejected},
        {"unknown_rejection_rate",
         unknown.size() > 0 ? json(static_cast<double>(unknown_rejected) / unknown.size())
                            : json()}};
    json matrix = json::array();
    for (std::size_t t = 0; t <= K; ++t) {
        json row = json::array();
        for (std::size_t p = 0; p <= K; ++p) row.push_back(confusion.at(t, p));
        matrix.push_back(row);
    }
    report["confusion"] = {{"classes", K + 1}, {"matrix", matrix}};

    const fs::path dir = ensure_out_dir(rc);
    write_json_file(dir / "eval_report.json", report);

    std::string csv = artifact_comment(rc);
    csv += "truth";
    for (std::size_t p = 0; p < K; ++p) csv += ",pred_" + std::to_string(p);
    csv += ",rejected\n";
    for (std::size_t t = 0; t <= K; ++t) {
        csv += (t == K) ? "unknown" : std::to_string(t);
        for (std::size_t p = 0; p <= K; ++p) csv += "," + std::to_string(confusion.at(t, p));
        csv += "\n";
    }
    write_text_file(dir / "confusion.csv", csv);

    std::cout << "eval: " << known.size() << " known + " << unknown.size()
              << " unknown samples; closed-set accuracy " << fmt_double(closed_acc)
              << ", macro-F1 " << fmt_double(f1);
    if (unknown.size() > 0)
        std::cout << ", unknown rejection rate "
                  << fmt_double(static_cast<double>(unknown_rejected) / unknown.size());
    std::cout << "\neval: wrote " << (dir / "eval_report.json").string() << " and "
              << (dir / "confusion.csv").string() << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// ablate
// ---------------------------------------------------------------------------

const Schema& ablate_schema() {
    static const Schema schema = [] {
        Schema s;
        s.command = "ablate";
        s.add("known_classes", KeyType::uint, 4);
        s.add("train_per_class", KeyType::uint, 150);
        s.add("test_per_class", KeyType::uint, 50);
        s.add("image_side", KeyType::uint, 12);
        s.add("noise_sigma", KeyType::dbl, 0.1);
        s.add("layer_dims", KeyType::uint_list, json::array({48, 24}));
        s.add("latent_dim", KeyType::uint, 8);
        s.add("prelu_init", KeyType::dbl, 0.25);
        s.add("epochs", KeyType::uint, 60);
        s.add("batch_size", KeyType::uint, 64);
        s.add("learning_rate", KeyType::dbl, 0.0005);
        s.add("momentum", KeyType::dbl, 0.0);
        s.add("lambda", KeyType::dbl, 100.0);
        s.add("beta_anneal_epochs", KeyType::uint, 0);
        s.add("variants", KeyType::str_list,
              json::array({"I", "II", "III", "IV", "V", "VI", "VII"}));
        s.add("openness_levels", KeyType::dbl_list, json::array({0.18, 0.33, 0.49}));
        s.add("seeds", KeyType::u64_list, json::array({1, 2, 3}));
        s.add("threads", KeyType::uint, 1);
        s.add("out", KeyType::str, ".");
        return s;
    }();
    return schema;
}

int cmd_ablate(const CommonFlags& cf) {
    const ResolvedConfig rc = resolve_config(ablate_schema(), cf);
    const json& v = rc.values;

    AblationSpec spec;
    spec.known_classes = v.at("known_classes").get<std::size_t>();
    spec.train_per_class = v.at("train_per_class").get<std::size_t>();
    spec.test_per_class = v.at("test_per_class").get<std::size_t>();
    spec.image_side = v.at("image_side").get<std::size_t>();
    spec.noise_sigma = v.at("noise_sigma").get<double>();
    spec.layer_dims = uint_list(v.at("layer_dims"));
    spec.latent_dim = v.at("latent_dim").get<std::size_t>();
    spec.prelu_init = v.at("prelu_init").get<double>();
    spec.train.epochs = v.at("epochs").get<std::size_t>();
    spec.train.batch_size = v.at("batch_size").get<std::size_t>();
    spec.train.learning_rate = v.at("learning_rate").get<double>();
    spec.train.momentum = v.at("momentum").get<double>();
    spec.train.lambda = v.at("lambda").get<double>();
    spec.train.beta_anneal_epochs = v.at("beta_anneal_epochs").get<std::size_t>();
    for (const json& e : v.at("variants")) spec.variants.push_back(e.get<std::string>());
    for (const json& e : v.at("openness_levels")) spec.openness_levels.push_back(e.get<double>());
    for (const json& e : v.at("seeds")) spec.seeds.push_back(e.get<std::uint64_t>());
    spec.threads = v.at("threads").get<std::size_t>();
    if (spec.threads == 0) throw config_error("threads must be >= 1");

    // CGDL_THREADS caps the worker count without changing the resolved config
    // (cell results are thread-count invariant, so the cap is safe).
    if (const char* env = std::getenv("CGDL_THREADS")) {
        std::size_t cap = 0;
        const std::string text = env;
        const auto res = std::from_chars(text.data(), text.data() + text.size(), cap);
        if (res.ec != std::errc() || res.ptr != text.data() + text.size() || cap == 0)
            throw config_error("CGDL_THREADS must be a positive integer, got '" + text + "'");
        if (cap < spec.threads) {
            std::cerr << "note: CGDL_THREADS=" << cap << " caps threads=" << spec.threads << "\n";
            spec.threads = cap;
        }
    }

    const std::vector<AblationCell> cells = run_ablation(spec);
    const std::vector<AblationSummaryRow> summary = summarize_ablation(spec, cells);

    std::size_t failed = 0;
    for (const AblationCell& c : cells) {
        if (!c.failed) continue;
        ++failed;
        std::cerr << "warn: cell variant=" << c.variant << " openness=" << fmt_double(c.openness_level)
                  << " seed=" << c.seed << " failed: " << c.diagnostic << "\n";
    }

    const fs::path dir = ensure_out_dir(rc);

    std::string cells_csv = artifact_comment(rc);
    cells_csv +=
        "variant,openness_level,openness_actual,unknown_classes,seed,macro_f1,"
        "closed_set_accuracy,failed,diagnostic\n";
    for (const AblationCell& c : cells) {
        cells_csv += c.variant;
        cells_csv += "," + fmt_double(c.openness_level);
        cells_csv += "," + fmt_double(c.openness_actual);
        cells_csv += "," + std::to_string(c.unknown_classes);
        cells_csv += "," + std::to_string(c.seed);
        cells_csv += "," + fmt_double(c.macro_f1);
        cells_csv += "," + fmt_double(c.closed_set_accuracy);
        cells_csv += c.failed ? ",1," : ",0,";
        cells_csv += csv_field(c.diagnostic);
        cells_csv += "\n";
    }
    write_text_file(dir / "ablation_cells.csv", cells_csv);

    std::string grid_csv = artifact_comment(rc);
    grid_csv += "variant,openness_level,cells,mean_macro_f1,std_macro_f1\n";
    for (const AblationSummaryRow& r : summary) {
        grid_csv += r.variant;
        grid_csv += "," + fmt_double(r.openness_level);
        grid_csv += "," + std::to_string(r.cells);
        grid_csv += "," + fmt_double(r.mean_macro_f1);
        grid_csv += "," + fmt_double(r.std_macro_f1);
        grid_csv += "\n";
    }
    write_text_file(dir / "ablation.csv", grid_csv);

    std::ostringstream text;
    text << kToolName << " " << kToolVersion << " ablation summary\n";
    text << "config: " << rc.dump() << "\n";
    text << "cells: " << cells.size() << " total, " << (cells.size() - failed) << " succeeded, "
         << failed << " failed\n\n";
    text << "variant  openness  cells  mean_macro_f1  std_macro_f1\n";
    text << std::fixed << std::setprecision(4);
    for (const AblationSummaryRow& r : summary) {
        text << std::left << std::setw(9) << r.variant << std::setw(10) << r.openness_level
             << std::setw(7) << r.cells << std::setw(15) << r.mean_macro_f1 << r.std_macro_f1
             << "\n";
    }
    text.unsetf(std::ios::fixed | std::ios::left);
    text << std::setprecision(6);
    if (failed > 0) {
        text << "\nfailed cells:\n";
        for (const AblationCell& c : cells)
            if (c.failed)
                text << "  variant " << c.variant << " openness " << fmt_double(c.openness_level)
                     << " seed " << c.seed << ": " << c.diagnostic << "\n";
    }
    write_text_file(dir / "summary.txt", text.str());
    std::cout << text.str();
    std::cout << "ablate: wrote " << (dir / "ablation.csv").string() << ", "
              << (dir / "ablation_cells.csv").string() << ", " << (dir / "summary.txt").string()
              << "\n";

    if (failed == cells.size())
        throw numeric_error("every ablation cell failed; see ablation_cells.csv for diagnostics");
    return 0;
}

// ---------------------------------------------------------------------------
// export-latents
// ---------------------------------------------------------------------------

const Schema& export_latents_schema() {
    static const Schema schema = [] {
        Schema s;
        s.command = "export-latents";
        s.add("checkpoint", KeyType::str, "");
        s.add("images", KeyType::str, "");
        s.add("labels", KeyType::str, "");
        s.add("file", KeyType::str, "latents.csv");
        s.add("seed", KeyType::u64, 1);  // unused by the math; kept for artifact echo
        s.add("out", KeyType::str, ".");
        return s;
    }();
    return schema;
}

int cmd_export_latents(const CommonFlags& cf) {
    const ResolvedConfig rc = resolve_config(export_latents_schema(), cf);
    const LadderModel model = load_checkpoint(require_path(rc, "checkpoint"));
    const LabeledImageSet data =
        load_idx(require_path(rc, "images"), require_path(rc, "labels"));

    const fs::path dir = ensure_out_dir(rc);
    const fs::path path = dir / rc.values.at("file").get<std::string>();
    export_latents(model, data, path.string());

    // Re-emit the file with the standard artifact preamble on top.
    std::ifstream in(path, std::ios::binary);
    std::stringstream body;
    body << in.rdbuf();
    in.close();
    write_text_file(path, artifact_comment(rc) + body.str());

    std::cout << "export-latents: wrote " << data.size() << " rows to " << path.string() << "\n";
    return 0;
}

}  // namespace

// ---------------------------------------------------------------------------
// entry point
// ---------------------------------------------------------------------------

int main(int argc, char** argv) {
    CLI::App app{std::string(cgdl::kToolName) +
                 " - conditional-Gaussian open set recognition toolkit"};
    app.set_version_flag("--version", std::string(cgdl::kToolVersion));
    app.require_subcommand(1);

    std::function<int()> action;

    CLI::App* gen = app.add_subcommand("gen-data", "generate IDX image/label files + manifest");
    auto gen_cf = add_common_flags(gen);
    gen->callback([&action, gen_cf] { action = [gen_cf] { return cmd_gen_data(*gen_cf); }; });

    CLI::App* train = app.add_subcommand(
        "train", "train a model, calibrate the detector, write checkpoint + log");
    auto train_cf = add_common_flags(train);
    train->callback([&action, train_cf] { action = [train_cf] { return cmd_train(*train_cf); }; });

    CLI::App* eval = app.add_subcommand(
        "eval", "evaluate a checkpoint on known/unknown sets, write report + confusion");
    auto eval_cf = add_common_flags(eval);
    eval->callback([&action, eval_cf] { action = [eval_cf] { return cmd_eval(*eval_cf); }; });

    CLI::App* ablate =
        app.add_subcommand("ablate", "run the variant x openness x seed grid, write CSV tables");
    auto ablate_cf = add_common_flags(ablate);
    ablate->callback(
        [&action, ablate_cf] { action = [ablate_cf] { return cmd_ablate(*ablate_cf); }; });

    CLI::App* exl =
        app.add_subcommand("export-latents", "write deterministic latent codes as CSV");
    auto exl_cf = add_common_flags(exl);
    exl->callback(
        [&action, exl_cf] { action = [exl_cf] { return cmd_export_latents(*exl_cf); }; });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;  // bad flags are configuration errors
    }

    const auto report = [](const char* family, const std::exception& e) {
        std::cerr << "error (" << family << "): " << e.what() << "\n";
    };
    try {
        return action ? action() : 2;
    } catch (const cgdl::config_error& e) {
        report("config", e);
        return 2;
    } catch (const cgdl::io_error& e) {
        report("i/o", e);
        return 3;
    } catch (const cgdl::format_error& e) {
        report("data format", e);
        return 3;
    } catch (const cgdl::numeric_error& e) {
        report("numeric", e);
        return 4;
    } catch (const cgdl::calibration_error& e) {
        report("calibration", e);
        return 4;
    } catch (const cgdl::checkpoint_error& e) {
        report("checkpoint", e);
        return 5;
    } catch (const cgdl::contract_error& e) {
        report("internal contract", e);
        return 1;
    } catch (const std::exception& e) {
        report("unexpected", e);
        return 1;
    }
}
