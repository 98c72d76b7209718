#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cgdl/checkpoint.hpp"
#include "cgdl/errors.hpp"
#include "testutil.hpp"

using namespace cgdl;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

LadderConfig demo_config() {
    LadderConfig cfg;
    cfg.input_dim = 12;
    cfg.layer_dims = {9, 7};
    cfg.latent_dim = 4;
    cfg.num_classes = 3;
    return cfg;
}

CheckpointMeta demo_meta() {
    CheckpointMeta meta;
    meta.seed = 42;
    meta.epoch = 17;
    meta.run_config_json = R"({"epochs":17,"learning_rate":0.001})";
    meta.has_detector = true;
    meta.thresholds.tau_l = 0.5;
    meta.thresholds.tau_r = 3.25e-1;
    for (int k = 0; k < 3; ++k) {
        ClassGaussian g;
        g.class_id = k;
        g.count = 40 + static_cast<std::size_t>(k);
        g.mean = {0.1 * k, -0.2, 0.3, 1.0 / 3.0};
        g.var = {1.0, 0.5, 0.25, 2.0 / 3.0};
        meta.gaussians.push_back(g);
    }
    return meta;
}

std::vector<char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<char>((std::istreambuf_iterator<char>(in)),
                             std::istreambuf_iterator<char>());
}

void dump(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("round-trip restores parameters, config, and detector state bit-exactly") {
    const LadderModel model(demo_config(), 42);
    const CheckpointMeta meta = demo_meta();
    TempFile f("./tmp_ckpt_roundtrip.cgdl");
    save_checkpoint(f.path, model, meta);

    CheckpointMeta loaded_meta;
    const LadderModel loaded = load_checkpoint(f.path, &loaded_meta);

    CHECK(loaded.config().input_dim == 12);
    CHECK(loaded.config().layer_dims == std::vector<std::size_t>{9, 7});
    CHECK(loaded.config().latent_dim == 4);
    CHECK(loaded.config().num_classes == 3);
    CHECK(loaded.config().ladder_enabled);
    CHECK(loaded.config().prelu_init == model.config().prelu_init);

    const auto pa = model.named_parameters();
    const auto pb = loaded.named_parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        REQUIRE(pa[i].second.shape() == pb[i].second.shape());
        for (std::size_t j = 0; j < pa[i].second.size(); ++j)
            CHECK(pa[i].second.value()[j] == pb[i].second.value()[j]);
    }

    CHECK(loaded_meta.seed == 42);
    CHECK(loaded_meta.epoch == 17);
    CHECK(loaded_meta.has_detector);
    CHECK(loaded_meta.thresholds.tau_l == 0.5);
    CHECK(loaded_meta.thresholds.tau_r == 3.25e-1);
    REQUIRE(loaded_meta.gaussians.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(loaded_meta.gaussians[k].class_id == static_cast<int>(k));
        CHECK(loaded_meta.gaussians[k].count == 40 + k);
        CHECK(loaded_meta.gaussians[k].mean == meta.gaussians[k].mean);  // bit-exact doubles
        CHECK(loaded_meta.gaussians[k].var == meta.gaussians[k].var);
    }
    CHECK_FALSE(loaded_meta.run_config_json.empty());
    CHECK(loaded_meta.run_config_json.find("\"epochs\":17") != std::string::npos);
}

TEST_CASE("loading reproduces forward outputs bit-exactly") {
    LadderConfig cfg = demo_config();
    const LadderModel model(cfg, 7);
    TempFile f("./tmp_ckpt_forward.cgdl");
    save_checkpoint(f.path, model, {});
    const LadderModel loaded = load_checkpoint(f.path);

    Rng rng(3, 1);
    const Tensor x = testutil::random_tensor({5, 12}, rng, 0.0, 1.0);
    const Tensor z1 = model.encode_latent(x);
    const Tensor z2 = loaded.encode_latent(x);
    for (std::size_t i = 0; i < z1.size(); ++i) CHECK(z1[i] == z2[i]);
    const Tensor r1 = model.reconstruct(x);
    const Tensor r2 = loaded.reconstruct(x);
    for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}

TEST_CASE("saving twice produces byte-identical files") {
    const LadderModel model(demo_config(), 11);
    const CheckpointMeta meta = demo_meta();
    TempFile f1("./tmp_ckpt_a.cgdl");
    TempFile f2("./tmp_ckpt_b.cgdl");
    save_checkpoint(f1.path, model, meta);
    save_checkpoint(f2.path, model, meta);
    CHECK(slurp(f1.path) == slurp(f2.path));

    // Saving a loaded model reproduces the file again.
    CheckpointMeta loaded_meta;
    const LadderModel loaded = load_checkpoint(f1.path, &loaded_meta);
    TempFile f3("./tmp_ckpt_c.cgdl");
    save_checkpoint(f3.path, loaded, loaded_meta);
    CHECK(slurp(f1.path) == slurp(f3.path));
}

TEST_CASE("malformed files are rejected with precise errors") {
    const LadderModel model(demo_config(), 5);
    TempFile f("./tmp_ckpt_bad.cgdl");
    save_checkpoint(f.path, model, demo_meta());
    const std::vector<char> good = slurp(f.path);

    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_checkpoint("./tmp_ckpt_nonexistent.cgdl"), io_error);
    }
    SUBCASE("bad magic") {
        auto bytes = good;
        bytes[0] = 'X';
        dump(f.path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("magic"),
                             checkpoint_error);
    }
    SUBCASE("unsupported version") {
        auto bytes = good;
        bytes[8] = 99;
        dump(f.path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("version"),
                             checkpoint_error);
    }
    SUBCASE("truncated payload") {
        auto bytes = good;
        bytes.resize(bytes.size() - 16);
        dump(f.path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("truncated"),
                             checkpoint_error);
    }
    SUBCASE("trailing garbage") {
        auto bytes = good;
        bytes.push_back('\0');
        dump(f.path, bytes);
        CHECK_THROWS_WITH_AS(load_checkpoint(f.path), doctest::Contains("trailing"),
                             checkpoint_error);
    }
    SUBCASE("header shorter than the file claims") {
        auto bytes = good;
        bytes.resize(14);
        dump(f.path, bytes);
        CHECK_THROWS_AS(load_checkpoint(f.path), checkpoint_error);
    }
}

TEST_CASE("a detector-free checkpoint loads with empty detector state") {
    const LadderModel model(demo_config(), 5);
    CheckpointMeta meta;
    meta.seed = 5;
    meta.epoch = 0;
    TempFile f("./tmp_ckpt_plain.cgdl");
    save_checkpoint(f.path, model, meta);
    CheckpointMeta loaded;
    load_checkpoint(f.path, &loaded);
    CHECK_FALSE(loaded.has_detector);
    CHECK(loaded.gaussians.empty());
    CHECK(loaded.run_config_json.empty());
}
