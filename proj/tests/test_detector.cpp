#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "cgdl/detector.hpp"
#include "cgdl/errors.hpp"
#include "cgdl/trainer.hpp"
#include "testutil.hpp"

using namespace cgdl;

namespace {

LabeledImageSet small_data(std::uint64_t seed = 3) {
    SyntheticSpec spec;
    spec.num_classes = 3;
    spec.per_class = 25;
    spec.image_side = 8;
    spec.noise_sigma = 0.08;
    spec.seed = seed;
    return generate_synthetic(spec);
}

LadderModel trained_model(const LabeledImageSet& data) {
    LadderConfig cfg;
    cfg.input_dim = 64;
    cfg.layer_dims = {16, 8};
    cfg.latent_dim = 4;
    cfg.num_classes = 3;
    LadderModel model(cfg, 1);
    TrainConfig tc;
    tc.epochs = 12;
    tc.batch_size = 16;
    tc.learning_rate = 0.002;
    tc.seed = 9;
    train(model, data, tc);
    return model;
}

}  // namespace

TEST_CASE("membership probability: closed form vs quadrature, and frozen points") {
    // J = 1 at one sigma: P = 1 - erf(1/sqrt(2)) = erfc(1/sqrt(2)).
    ClassGaussian g;
    g.mean = {2.0};
    g.var = {4.0};
    const double at_one_sigma = membership_probability({4.0}, g);
    CHECK(at_one_sigma == doctest::Approx(0.31731050786291415).epsilon(1e-12));
    // Exactly 1 at the mean.
    CHECK(membership_probability({2.0}, g) == 1.0);

    Rng rng(61, 0);
    for (std::size_t J : {std::size_t(1), std::size_t(2), std::size_t(5)}) {
        for (int rep = 0; rep < 8; ++rep) {
            std::vector<double> z(J), mean(J), var(J);
            for (std::size_t j = 0; j < J; ++j) {
                mean[j] = -2.0 + 4.0 * rng.uniform();
                var[j] = 0.2 + 2.5 * rng.uniform();
                z[j] = mean[j] + (-2.5 + 5.0 * rng.uniform()) * std::sqrt(var[j]);
            }
            ClassGaussian cg;
            cg.mean = mean;
            cg.var = var;
            const double closed = membership_probability(z, cg);
            const double quad = testutil::membership_quadrature(z, mean, var);
            CAPTURE(J);
            CHECK(std::abs(closed - quad) < 1e-6);
            CHECK(closed >= 0.0);
            CHECK(closed <= 1.0);
        }
    }
}

TEST_CASE("membership decreases as a coordinate moves away from the mean") {
    ClassGaussian g;
    g.mean = {0.0, 1.0, -1.0};
    g.var = {1.0, 0.5, 2.0};
    CHECK(membership_probability({0.0, 1.0, -1.0}, g) == 1.0);
    // The product form keeps P at exactly 1 while any coordinate sits on its
    // mean (that axis contributes zero inside-mass), so probe monotonicity
    // with every coordinate slightly off-mean.
    double prev = membership_probability({0.01, 1.01, -0.99}, g);
    CHECK(prev < 1.0);
    for (double step : {0.25, 0.5, 1.0, 2.0, 4.0}) {
        const double p = membership_probability({step, 1.01, -0.99}, g);
        CHECK(p < prev);
        prev = p;
    }
    // Far away on every axis the probability collapses toward zero.
    CHECK(membership_probability({40.0, 31.0, -41.0}, g) < 1e-12);
    // Dimension mismatch is a contract violation.
    CHECK_THROWS_AS(membership_probability({0.0}, g), contract_error);
}

TEST_CASE("nearest-rank percentile") {
    std::vector<double> v(100);
    for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;  // 1..100
    // Shuffle to prove sorting happens inside.
    Rng rng(62, 0);
    rng.shuffle(v);
    CHECK(nearest_rank_percentile(v, 0.95) == 95.0);
    CHECK(nearest_rank_percentile(v, 1.0) == 100.0);
    CHECK(nearest_rank_percentile(v, 0.001) == 1.0);
    CHECK(nearest_rank_percentile({7.5}, 0.95) == 7.5);
    CHECK(nearest_rank_percentile({3.0, 1.0}, 0.5) == 1.0);  // rank ceil(1.0) = 1
    CHECK_THROWS_AS(nearest_rank_percentile({}, 0.95), calibration_error);
    CHECK_THROWS_AS(nearest_rank_percentile({1.0}, 0.0), contract_error);
    CHECK_THROWS_AS(nearest_rank_percentile({1.0}, 1.5), contract_error);
}

TEST_CASE("fitted class gaussians describe the training latents") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    const std::vector<ClassGaussian> gs = fit_class_gaussians(model, data);
    REQUIRE(gs.size() == 3);
    const Tensor z = model.encode_latent(data.all());
    const std::vector<int> pred = predict_labels(model, data);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(gs[k].class_id == static_cast<int>(k));
        REQUIRE(gs[k].mean.size() == 4);
        REQUIRE(gs[k].var.size() == 4);
        CHECK(gs[k].count >= 2);
        // Recompute the mean over correctly classified members.
        std::vector<double> mean(4, 0.0);
        std::size_t n = 0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data.labels[i] != static_cast<int>(k) || pred[i] != static_cast<int>(k)) continue;
            ++n;
            for (std::size_t j = 0; j < 4; ++j) mean[j] += z.at(i, j);
        }
        REQUIRE(n == gs[k].count);
        for (std::size_t j = 0; j < 4; ++j) {
            mean[j] /= static_cast<double>(n);
            CHECK(gs[k].mean[j] == doctest::Approx(mean[j]).epsilon(1e-9));
            CHECK(gs[k].var[j] >= kVarianceFloor);
        }
    }
}

TEST_CASE("fitting reports classes without usable members") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    // Claim a 4th class that has no samples at all.
    LadderConfig cfg = model.config();
    cfg.num_classes = 4;
    LadderModel wide(cfg, 1);
    TrainConfig tc;
    tc.epochs = 6;
    tc.batch_size = 16;
    tc.learning_rate = 0.002;
    train(wide, data, tc);
    CHECK_THROWS_WITH_AS(fit_class_gaussians(wide, data), doctest::Contains("class 3"),
                         calibration_error);
}

TEST_CASE("tau_r calibration matches the percentile of reconstruction errors") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    const std::vector<double> errors = reconstruction_errors(model, data);
    REQUIRE(errors.size() == data.size());
    for (double e : errors) CHECK(e >= 0.0);
    const double tau = calibrate_tau_r(model, data);
    CHECK(tau == nearest_rank_percentile(errors, 0.95));
    // The defining property: at least 95% of training errors fall at or below.
    std::size_t below = 0;
    for (double e : errors)
        if (e <= tau) ++below;
    CHECK(static_cast<double>(below) / errors.size() >= 0.95);
    CHECK(static_cast<double>(below) / errors.size() <= 0.95 + 1.0 / errors.size() + 1e-12);
    // Errors agree with a direct reconstruction.
    const Tensor recon = model.reconstruct(data.all());
    double first = 0.0;
    for (std::size_t j = 0; j < data.image_pixels(); ++j)
        first += std::abs(recon.at(0, j) - data.pixels[j]);
    CHECK(errors[0] == doctest::Approx(first).epsilon(1e-12));
}

TEST_CASE("threshold extremes bracket the decisions") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    const auto gaussians = fit_class_gaussians(model, data);

    DetectorThresholds all_known;
    all_known.tau_l = 0.0;  // membership can't go below zero
    all_known.tau_r = std::numeric_limits<double>::infinity();
    for (const Decision& d : decide_batch(model, data, gaussians, all_known, DetectorKind::cgd))
        CHECK(d.verdict == Verdict::known);
    for (const Decision& d : decide_batch(model, data, gaussians, all_known, DetectorKind::re))
        CHECK(d.verdict == Verdict::known);
    for (const Decision& d :
         decide_batch(model, data, gaussians, all_known, DetectorKind::cgd_and_re))
        CHECK(d.verdict == Verdict::known);

    DetectorThresholds all_unknown;
    all_unknown.tau_l = 1.0 + 1e-9;  // membership never exceeds 1
    all_unknown.tau_r = -1.0;        // errors are nonnegative
    for (const Decision& d : decide_batch(model, data, gaussians, all_unknown, DetectorKind::cgd))
        CHECK(d.verdict == Verdict::unknown);
    for (const Decision& d : decide_batch(model, data, gaussians, all_unknown, DetectorKind::re))
        CHECK(d.verdict == Verdict::unknown);
}

TEST_CASE("rejection sets are monotone in the thresholds and compose by union") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    const auto gaussians = fit_class_gaussians(model, data);

    DetectorThresholds mid;
    mid.tau_l = 0.5;
    mid.tau_r = calibrate_tau_r(model, data);
    const auto by_cgd = decide_batch(model, data, gaussians, mid, DetectorKind::cgd);
    const auto by_re = decide_batch(model, data, gaussians, mid, DetectorKind::re);
    const auto by_both = decide_batch(model, data, gaussians, mid, DetectorKind::cgd_and_re);
    REQUIRE(by_cgd.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const bool expect_unknown = by_cgd[i].verdict == Verdict::unknown ||
                                    by_re[i].verdict == Verdict::unknown;
        CHECK((by_both[i].verdict == Verdict::unknown) == expect_unknown);
    }

    // Raising tau_l can only grow the cgd rejection set.
    DetectorThresholds lower = mid, higher = mid;
    lower.tau_l = 0.2;
    higher.tau_l = 0.8;
    const auto at_low = decide_batch(model, data, gaussians, lower, DetectorKind::cgd);
    const auto at_high = decide_batch(model, data, gaussians, higher, DetectorKind::cgd);
    for (std::size_t i = 0; i < data.size(); ++i)
        if (at_low[i].verdict == Verdict::unknown) CHECK(at_high[i].verdict == Verdict::unknown);
}

TEST_CASE("decision payloads are consistent") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    const auto gaussians = fit_class_gaussians(model, data);
    DetectorThresholds t;
    t.tau_l = 0.5;
    t.tau_r = calibrate_tau_r(model, data);

    const auto decisions = decide_batch(model, data, gaussians, t, DetectorKind::cgd_and_re);
    const std::vector<int> pred = predict_labels(model, data);
    for (std::size_t i = 0; i < decisions.size(); ++i) {
        const Decision& d = decisions[i];
        CHECK((d.verdict == Verdict::known) == d.predicted_label.has_value());
        if (d.predicted_label) CHECK(*d.predicted_label == pred[i]);
        CHECK(d.max_membership >= 0.0);
        CHECK(d.max_membership <= 1.0);
        CHECK(d.recon_error >= 0.0);
    }

    // The single-sample path gives the same answer as the batched one.
    std::vector<double> first(data.pixels.begin(),
                              data.pixels.begin() + static_cast<long>(data.image_pixels()));
    const Decision single = decide(first, model, gaussians, t, DetectorKind::cgd_and_re);
    CHECK((single.verdict == Verdict::known) == (decisions[0].verdict == Verdict::known));
    CHECK(single.max_membership == doctest::Approx(decisions[0].max_membership).epsilon(1e-12));
    CHECK(single.recon_error == doctest::Approx(decisions[0].recon_error).epsilon(1e-12));
}

TEST_CASE("membership-based kinds demand fitted gaussians") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    DetectorThresholds t;
    t.tau_r = 1.0;
    const std::vector<ClassGaussian> none;
    CHECK_THROWS_AS(decide_batch(model, data, none, t, DetectorKind::cgd), contract_error);
    CHECK_THROWS_AS(decide_batch(model, data, none, t, DetectorKind::cgd_and_re), contract_error);
    // softmax and re kinds never touch them.
    CHECK_NOTHROW(decide_batch(model, data, none, t, DetectorKind::re));
    CHECK_NOTHROW(decide_batch(model, data, none, t, DetectorKind::softmax_threshold));
}

TEST_CASE("softmax thresholding rejects low-confidence rows") {
    const LabeledImageSet data = small_data();
    const LadderModel model = trained_model(data);
    DetectorThresholds confident;
    confident.tau_l = 0.999999;
    std::size_t rejected = 0;
    for (const Decision& d :
         decide_batch(model, data, {}, confident, DetectorKind::softmax_threshold))
        if (d.verdict == Verdict::unknown) ++rejected;
    DetectorThresholds lax;
    lax.tau_l = 1.0 / 3.0;  // argmax prob of 3 classes is always >= 1/3
    for (const Decision& d : decide_batch(model, data, {}, lax, DetectorKind::softmax_threshold))
        CHECK(d.verdict == Verdict::known);
    // With a strict threshold at least some rejections appear on noisy data,
    // and never more than everything.
    CHECK(rejected <= data.size());
}
