#include "cgdl/detector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "cgdl/errors.hpp"
#include "cgdl/kernels.hpp"
#include "cgdl/trainer.hpp"

namespace cgdl {

double membership_probability(const std::vector<double>& z, const ClassGaussian& g) {
    if (z.size() != g.mean.size() || z.size() != g.var.size())
        throw contract_error("membership_probability: latent dimension mismatch");
    double prod = 1.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double sigma = std::sqrt(g.var[j]);
        prod *= std::erf(std::fabs(z[j] - g.mean[j]) / (sigma * 1.4142135623730951));
    }
    return 1.0 - prod;
}

std::vector<ClassGaussian> fit_class_gaussians(const LadderModel& model,
                                               const LabeledImageSet& train) {
    if (train.size() == 0) throw calibration_error("fit_class_gaussians: empty training set");
    const std::size_t K = model.config().num_classes;
    const std::size_t J = model.config().latent_dim;

    const std::vector<int> pred = predict_labels(model, train);

    // Latents of correctly classified samples, grouped by class.
    std::vector<std::vector<std::size_t>> members(K);
    for (std::size_t i = 0; i < train.size(); ++i)
        if (pred[i] == train.labels[i]) members[static_cast<std::size_t>(pred[i])].push_back(i);

    std::vector<ClassGaussian> out(K);
    for (std::size_t k = 0; k < K; ++k) {
        if (members[k].size() < 2)
            throw calibration_error("fit_class_gaussians: class " + std::to_string(k) +
                                    " has only " + std::to_string(members[k].size()) +
                                    " correctly classified samples (need at least 2)");
        const Tensor z = model.encode_latent(train.batch(members[k]));
        const std::size_t n = members[k].size();
        ClassGaussian& g = out[k];
        g.class_id = static_cast<int>(k);
        g.count = n;
        g.mean.assign(J, 0.0);
        g.var.assign(J, 0.0);
        // Two-pass mean then population variance.
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < J; ++j) g.mean[j] += z[i * J + j];
        for (std::size_t j = 0; j < J; ++j) g.mean[j] /= static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < J; ++j) {
                const double d = z[i * J + j] - g.mean[j];
                g.var[j] += d * d;
            }
        for (std::size_t j = 0; j < J; ++j)
            g.var[j] = std::max(g.var[j] / static_cast<double>(n), kVarianceFloor);
    }
    return out;
}

std::vector<double> reconstruction_errors(const LadderModel& model, const LabeledImageSet& data) {
    if (data.size() == 0) throw calibration_error("reconstruction_errors: empty dataset");
    const std::size_t d = data.image_pixels();
    const std::size_t chunk = 256;
    std::vector<double> errors(data.size());
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor x = data.batch(idx);
        const Tensor recon = model.reconstruct(x);
        for (std::size_t i = 0; i < idx.size(); ++i)
            errors[start + i] =
                kernels::active().abs_diff_sum(x.data() + i * d, recon.data() + i * d, d);
    }
    return errors;
}

double nearest_rank_percentile(std::vector<double> values, double q) {
    if (values.empty()) throw calibration_error("nearest_rank_percentile: no values");
    if (!(q > 0.0 && q <= 1.0))
        throw contract_error("nearest_rank_percentile: q must lie in (0,1]");
    std::sort(values.begin(), values.end());
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(values.size())));
    return values[std::max<std::size_t>(rank, 1) - 1];
}

double calibrate_tau_r(const LadderModel& model, const LabeledImageSet& train, double percentile) {
    return nearest_rank_percentile(reconstruction_errors(model, train), percentile);
}

namespace {

Decision decide_row(const double* z, const double* probs, double recon_error, std::size_t K,
                    std::size_t J, const std::vector<ClassGaussian>& gaussians,
                    const DetectorThresholds& thresholds, DetectorKind kind) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < K; ++k)
        if (probs[k] > probs[best]) best = k;

    Decision d;
    d.recon_error = recon_error;

    bool unknown = false;
    switch (kind) {
        case DetectorKind::softmax_threshold:
            unknown = probs[best] < thresholds.tau_l;
            break;
        case DetectorKind::cgd:
        case DetectorKind::cgd_and_re: {
            std::vector<double> zv(z, z + J);
            double max_p = 0.0;
            for (const ClassGaussian& g : gaussians)
                max_p = std::max(max_p, membership_probability(zv, g));
            d.max_membership = max_p;
            unknown = max_p < thresholds.tau_l;
            if (kind == DetectorKind::cgd_and_re)
                unknown = unknown || recon_error > thresholds.tau_r;
            break;
        }
        case DetectorKind::re:
            unknown = recon_error > thresholds.tau_r;
            break;
    }
    d.verdict = unknown ? Verdict::unknown : Verdict::known;
    if (!unknown) d.predicted_label = static_cast<int>(best);
    return d;
}

}  // namespace

std::vector<Decision> decide_batch(const LadderModel& model, const LabeledImageSet& data,
                                   const std::vector<ClassGaussian>& gaussians,
                                   const DetectorThresholds& thresholds, DetectorKind kind) {
    if (data.size() == 0) return {};
    const bool needs_gaussians = kind == DetectorKind::cgd || kind == DetectorKind::cgd_and_re;
    if (needs_gaussians && gaussians.empty())
        throw contract_error("decide: this detector needs fitted class Gaussians");
    const bool needs_recon = kind == DetectorKind::re || kind == DetectorKind::cgd_and_re;

    const std::size_t K = model.config().num_classes;
    const std::size_t J = model.config().latent_dim;
    const std::size_t d = data.image_pixels();
    const std::size_t chunk = 256;
    std::vector<Decision> out(data.size());

    NoGradGuard guard;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor x = data.batch(idx);
        Tensor z, recon;
        model.encode_and_reconstruct(x, &z, needs_recon ? &recon : nullptr);
        const Tensor probs = model.classify(Var::constant(z)).value();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double err = needs_recon ? kernels::active().abs_diff_sum(
                                                 x.data() + i * d, recon.data() + i * d, d)
                                           : 0.0;
            out[start + i] = decide_row(z.data() + i * J, probs.data() + i * K, err, K, J,
                                        gaussians, thresholds, kind);
        }
    }
    return out;
}

Decision decide(const std::vector<double>& image, const LadderModel& model,
                const std::vector<ClassGaussian>& gaussians, const DetectorThresholds& thresholds,
                DetectorKind kind) {
    if (image.size() != model.config().input_dim)
        throw contract_error("decide: image has " + std::to_string(image.size()) +
                             " pixels, model expects " + std::to_string(model.config().input_dim));
    LabeledImageSet one;
    one.height = 1;
    one.width = image.size();
    one.pixels = image;
    one.labels = {0};
    return decide_batch(model, one, gaussians, thresholds, kind).front();
}

}  // namespace cgdl
