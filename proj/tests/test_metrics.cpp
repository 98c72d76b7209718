#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cgdl/errors.hpp"
#include "cgdl/metrics.hpp"
#include "cgdl/trainer.hpp"

using namespace cgdl;

TEST_CASE("openness endpoints and domain") {
    // 15 training classes against 30 and 100 test classes: the documented
    // working range rounds to 18% and 49%.
    const double low = openness(15, 30, 15);
    const double high = openness(15, 100, 15);
    CHECK(low == doctest::Approx(1.0 - std::sqrt(30.0 / 45.0)).epsilon(1e-15));
    CHECK(high == doctest::Approx(1.0 - std::sqrt(30.0 / 115.0)).epsilon(1e-15));
    CHECK(std::lround(low * 100.0) == 18);
    CHECK(std::lround(high * 100.0) == 49);
    CHECK(low == doctest::Approx(0.18350341907227397).epsilon(1e-14));
    CHECK(high == doctest::Approx(0.4892460815447508).epsilon(1e-14));

    // No extra test classes: zero openness.
    CHECK(openness(7, 7, 7) == doctest::Approx(0.0).epsilon(1e-15));

    CHECK_THROWS_AS(openness(0, 5, 5), config_error);
    CHECK_THROWS_AS(openness(5, 0, 5), config_error);
    CHECK_THROWS_AS(openness(5, 5, 0), config_error);
    // 2*n_train must not exceed n_test + n_target (openness would go negative).
    CHECK_THROWS_AS(openness(4, 3, 4), config_error);
}

TEST_CASE("confusion matrix assembly from decisions") {
    const std::size_t K = 2;
    auto known = [](int label) {
        Decision d;
        d.verdict = Verdict::known;
        d.predicted_label = label;
        return d;
    };
    auto rejected = [] {
        Decision d;
        d.verdict = Verdict::unknown;
        return d;
    };
    const std::vector<int> truth = {0, 0, 1, 1, 2, 2};
    const std::vector<Decision> decisions = {known(0), rejected(), known(1),
                                             known(0), rejected(), known(1)};
    const ConfusionCounts c = confusion_from_decisions(truth, decisions, K);
    CHECK(c.classes == 3);
    CHECK(c.total() == 6);
    CHECK(c.at(0, 0) == 1);
    CHECK(c.at(0, 2) == 1);  // rejection lands in the unknown column
    CHECK(c.at(1, 1) == 1);
    CHECK(c.at(1, 0) == 1);
    CHECK(c.at(2, 2) == 1);
    CHECK(c.at(2, 1) == 1);

    CHECK_THROWS_AS(confusion_from_decisions({0, 1}, {known(0)}, K), contract_error);
    CHECK_THROWS_AS(confusion_from_decisions({3}, {known(0)}, K), contract_error);
    CHECK_THROWS_AS(confusion_from_decisions({0}, {known(2)}, K), contract_error);
}

TEST_CASE("macro F1 against a hand-computed matrix") {
    // truth \ pred     0  1  unk
    //   0            [ 8  1  1 ]   F1 = 16/19
    //   1            [ 0  9  1 ]   F1 = 9/11
    //   unk          [ 1  2  7 ]   F1 = 14/19
    ConfusionCounts c(3);
    c.at(0, 0) = 8;
    c.at(0, 1) = 1;
    c.at(0, 2) = 1;
    c.at(1, 1) = 9;
    c.at(1, 2) = 1;
    c.at(2, 0) = 1;
    c.at(2, 1) = 2;
    c.at(2, 2) = 7;
    const double expect = (16.0 / 19.0 + 9.0 / 11.0 + 14.0 / 19.0) / 3.0;
    CHECK(macro_f1(c) == doctest::Approx(expect).epsilon(1e-15));
    CHECK(macro_f1(c) == doctest::Approx(0.7990430622009569).epsilon(1e-14));

    // Perfect diagonal scores 1.
    ConfusionCounts perfect(3);
    perfect.at(0, 0) = 5;
    perfect.at(1, 1) = 5;
    perfect.at(2, 2) = 5;
    CHECK(macro_f1(perfect) == doctest::Approx(1.0).epsilon(1e-15));

    // A class with no truth and no predictions contributes zero.
    ConfusionCounts sparse(3);
    sparse.at(0, 0) = 4;
    sparse.at(1, 0) = 4;
    CHECK(macro_f1(sparse) ==
          doctest::Approx((2.0 * (4.0 / 8.0) * 1.0 / (4.0 / 8.0 + 1.0)) / 3.0).epsilon(1e-12));

    ConfusionCounts empty(3);
    CHECK(macro_f1(empty) == 0.0);
}

TEST_CASE("latent export writes a parseable high-precision csv") {
    SyntheticSpec sspec;
    sspec.num_classes = 2;
    sspec.per_class = 6;
    sspec.image_side = 6;
    sspec.seed = 3;
    const LabeledImageSet data = generate_synthetic(sspec);
    LadderConfig cfg;
    cfg.input_dim = 36;
    cfg.layer_dims = {10};
    cfg.latent_dim = 3;
    cfg.num_classes = 2;
    const LadderModel model(cfg, 5);

    const std::string path = "./tmp_latents.csv";
    export_latents(model, data, path);
    std::ifstream in(path);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "sample_id,label,z_1,z_2,z_3");

    const Tensor z = model.encode_latent(data.all());
    std::string line;
    std::size_t rows = 0;
    while (std::getline(in, line)) {
        std::stringstream ss(line);
        std::string field;
        std::getline(ss, field, ',');
        CHECK(std::stoul(field) == rows);
        std::getline(ss, field, ',');
        CHECK(std::stoi(field) == data.labels[rows]);
        for (std::size_t j = 0; j < 3; ++j) {
            std::getline(ss, field, ',');
            // %.17g output reparses to the identical double.
            CHECK(std::stod(field) == z.at(rows, j));
        }
        ++rows;
    }
    CHECK(rows == data.size());
    std::remove(path.c_str());

    CHECK_THROWS_AS(export_latents(model, data, "./no_such_dir/latents.csv"), io_error);
}
