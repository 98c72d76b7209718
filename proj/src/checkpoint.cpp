#include "cgdl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "cgdl/errors.hpp"
#include "cgdl/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are little-endian; big-endian hosts are unsupported");
static_assert(sizeof(double) == 8, "checkpoint payloads assume 64-bit IEEE doubles");

namespace cgdl {

namespace {

constexpr char kMagic[8] = {'C', 'G', 'D', 'L', 'C', 'K', 'P', 'T'};

using ojson = nlohmann::ordered_json;

void write_bytes(std::ofstream& out, const void* p, std::size_t n, const std::string& path) {
    out.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!out) throw io_error("failed writing checkpoint '" + path + "'");
}

void write_u32(std::ofstream& out, std::uint32_t v, const std::string& path) {
    write_bytes(out, &v, sizeof v, path);
}

void write_u64(std::ofstream& out, std::uint64_t v, const std::string& path) {
    write_bytes(out, &v, sizeof v, path);
}

// Cursor over the loaded file body after the JSON header.
struct Reader {
    const std::vector<char>& bytes;
    std::size_t pos;
    const std::string& path;

    void read_doubles(double* dst, std::size_t n) {
        const std::size_t need = n * sizeof(double);
        if (pos + need > bytes.size())
            throw checkpoint_error("checkpoint '" + path + "' truncated: payload ends at byte " +
                                   std::to_string(bytes.size()) + ", needed " +
                                   std::to_string(pos + need));
        std::memcpy(dst, bytes.data() + pos, need);
        pos += need;
    }
};

ojson shape_json(const std::vector<std::size_t>& shape) {
    ojson a = ojson::array();
    for (std::size_t d : shape) a.push_back(d);
    return a;
}

std::string shape_text(const std::vector<std::size_t>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i)
        s += (i ? "x" : "") + std::to_string(shape[i]);
    return s + "]";
}

}  // namespace

void save_checkpoint(const std::string& path, const LadderModel& model,
                     const CheckpointMeta& meta) {
    const auto params = model.named_parameters();
    const LadderConfig& cfg = model.config();

    ojson header;
    header["tool"] = kToolName;
    header["tool_version"] = kToolVersion;
    ojson mj;
    mj["input_dim"] = cfg.input_dim;
    mj["layer_dims"] = shape_json(cfg.layer_dims);
    mj["latent_dim"] = cfg.latent_dim;
    mj["num_classes"] = cfg.num_classes;
    mj["prelu_init"] = cfg.prelu_init;
    mj["ladder_enabled"] = cfg.ladder_enabled;
    header["model"] = mj;
    header["seed"] = meta.seed;
    header["epoch"] = meta.epoch;

    ojson manifest = ojson::array();
    for (const auto& [name, var] : params) {
        ojson e;
        e["name"] = name;
        e["shape"] = shape_json(var.shape());
        manifest.push_back(e);
    }
    header["params"] = manifest;

    ojson det;
    det["present"] = meta.has_detector;
    if (meta.has_detector) {
        det["tau_l"] = meta.thresholds.tau_l;
        det["tau_r"] = meta.thresholds.tau_r;
        det["latent_dim"] = cfg.latent_dim;
        ojson gs = ojson::array();
        for (const ClassGaussian& g : meta.gaussians) {
            if (g.mean.size() != cfg.latent_dim || g.var.size() != cfg.latent_dim)
                throw checkpoint_error("class gaussian for class " + std::to_string(g.class_id) +
                                       " has dimension " + std::to_string(g.mean.size()) +
                                       ", model latent dimension is " +
                                       std::to_string(cfg.latent_dim));
            ojson e;
            e["class_id"] = g.class_id;
            e["count"] = g.count;
            gs.push_back(e);
        }
        det["gaussians"] = gs;
    }
    header["detector"] = det;

    if (meta.run_config_json.empty()) {
        header["run_config"] = nullptr;
    } else {
        ojson rc = ojson::parse(meta.run_config_json, nullptr, false);
        if (rc.is_discarded())
            throw checkpoint_error("run_config_json is not valid JSON: " + meta.run_config_json);
        header["run_config"] = rc;
    }

    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot open checkpoint '" + path + "' for writing");
    write_bytes(out, kMagic, sizeof kMagic, path);
    write_u32(out, kCheckpointFormatVersion, path);
    write_u64(out, header_text.size(), path);
    write_bytes(out, header_text.data(), header_text.size(), path);
    for (const auto& [name, var] : params) {
        (void)name;
        const Tensor& t = var.value();
        write_bytes(out, t.data(), t.size() * sizeof(double), path);
    }
    if (meta.has_detector) {
        for (const ClassGaussian& g : meta.gaussians) {
            write_bytes(out, g.mean.data(), g.mean.size() * sizeof(double), path);
            write_bytes(out, g.var.data(), g.var.size() * sizeof(double), path);
        }
    }
    out.close();
    if (!out) throw io_error("failed writing checkpoint '" + path + "'");
}

LadderModel load_checkpoint(const std::string& path, CheckpointMeta* meta) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open checkpoint '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw io_error("failed reading checkpoint '" + path + "'");

    if (bytes.size() < sizeof kMagic + sizeof(std::uint32_t) + sizeof(std::uint64_t))
        throw checkpoint_error("checkpoint '" + path + "' too short (" +
                               std::to_string(bytes.size()) + " bytes) to hold a header");
    if (std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0)
        throw checkpoint_error("'" + path + "' is not a checkpoint (bad magic)");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + sizeof kMagic, sizeof version);
    if (version != kCheckpointFormatVersion)
        throw checkpoint_error("checkpoint '" + path + "' has format version " +
                               std::to_string(version) + "; this build reads version " +
                               std::to_string(kCheckpointFormatVersion));
    std::uint64_t header_len = 0;
    std::memcpy(&header_len, bytes.data() + sizeof kMagic + sizeof version, sizeof header_len);
    const std::size_t header_start = sizeof kMagic + sizeof version + sizeof header_len;
    if (header_start + header_len > bytes.size())
        throw checkpoint_error("checkpoint '" + path + "' header claims " +
                               std::to_string(header_len) + " bytes but only " +
                               std::to_string(bytes.size() - header_start) + " remain");

    ojson header = ojson::parse(bytes.begin() + static_cast<std::ptrdiff_t>(header_start),
                                bytes.begin() + static_cast<std::ptrdiff_t>(header_start) +
                                    static_cast<std::ptrdiff_t>(header_len),
                                nullptr, false);
    if (header.is_discarded())
        throw checkpoint_error("checkpoint '" + path + "' header is not valid JSON");

    LadderConfig cfg;
    CheckpointMeta m;
    try {
        const ojson& mj = header.at("model");
        cfg.input_dim = mj.at("input_dim").get<std::size_t>();
        cfg.layer_dims = mj.at("layer_dims").get<std::vector<std::size_t>>();
        cfg.latent_dim = mj.at("latent_dim").get<std::size_t>();
        cfg.num_classes = mj.at("num_classes").get<std::size_t>();
        cfg.prelu_init = mj.at("prelu_init").get<double>();
        cfg.ladder_enabled = mj.at("ladder_enabled").get<bool>();
        m.seed = header.at("seed").get<std::uint64_t>();
        m.epoch = header.at("epoch").get<std::size_t>();
    } catch (const ojson::exception& e) {
        throw checkpoint_error("checkpoint '" + path + "' header is incomplete: " + e.what());
    }
    cfg.validate();

    LadderModel model(cfg, m.seed);
    auto params = model.named_parameters();
    const ojson& manifest = header.at("params");
    if (!manifest.is_array() || manifest.size() != params.size())
        throw checkpoint_error("checkpoint '" + path + "' lists " +
                               std::to_string(manifest.is_array() ? manifest.size() : 0) +
                               " parameters; the model has " + std::to_string(params.size()));

    Reader reader{bytes, header_start + header_len, path};
    for (std::size_t i = 0; i < params.size(); ++i) {
        const std::string name = manifest[i].at("name").get<std::string>();
        const auto shape = manifest[i].at("shape").get<std::vector<std::size_t>>();
        if (name != params[i].first)
            throw checkpoint_error("checkpoint '" + path + "' parameter " + std::to_string(i) +
                                   " is '" + name + "', model expects '" + params[i].first + "'");
        Tensor& t = params[i].second.mutable_value();
        if (shape != t.shape())
            throw checkpoint_error("checkpoint '" + path + "' parameter '" + name + "' has shape " +
                                   shape_text(shape) + ", model expects " + shape_text(t.shape()));
        reader.read_doubles(t.data(), t.size());
    }

    const ojson& det = header.at("detector");
    m.has_detector = det.at("present").get<bool>();
    if (m.has_detector) {
        m.thresholds.tau_l = det.at("tau_l").get<double>();
        m.thresholds.tau_r = det.at("tau_r").get<double>();
        const std::size_t j = det.at("latent_dim").get<std::size_t>();
        if (j != cfg.latent_dim)
            throw checkpoint_error("checkpoint '" + path + "' detector latent dimension " +
                                   std::to_string(j) + " does not match model latent dimension " +
                                   std::to_string(cfg.latent_dim));
        for (const ojson& e : det.at("gaussians")) {
            ClassGaussian g;
            g.class_id = e.at("class_id").get<int>();
            g.count = e.at("count").get<std::size_t>();
            g.mean.resize(j);
            g.var.resize(j);
            reader.read_doubles(g.mean.data(), j);
            reader.read_doubles(g.var.data(), j);
            m.gaussians.push_back(std::move(g));
        }
    }

    if (reader.pos != bytes.size())
        throw checkpoint_error("checkpoint '" + path + "' has " +
                               std::to_string(bytes.size() - reader.pos) +
                               " unexpected trailing bytes");

    const ojson& rc = header.at("run_config");
    if (!rc.is_null()) m.run_config_json = rc.dump();
    if (meta) *meta = std::move(m);
    return model;
}

}  // namespace cgdl
