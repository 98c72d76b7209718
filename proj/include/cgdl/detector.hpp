#pragma once

#include <optional>
#include <vector>

#include "cgdl/dataset.hpp"
#include "cgdl/ladder.hpp"

namespace cgdl {

// Diagonal Gaussian fitted to the deterministic latent codes of one class's
// correctly classified training samples. Variances are population variances
// (denominator N) floored at 1e-6.
struct ClassGaussian {
    int class_id = -1;
    std::vector<double> mean;
    std::vector<double> var;
    std::size_t count = 0;
};

inline constexpr double kVarianceFloor = 1e-6;

struct DetectorThresholds {
    double tau_l = 0.5;  // membership threshold
    double tau_r = 0.0;  // reconstruction-error threshold (calibrated)
};

enum class Verdict { known, unknown };

struct Decision {
    Verdict verdict = Verdict::unknown;
    std::optional<int> predicted_label;  // present iff verdict == known
    double max_membership = 0.0;
    double recon_error = 0.0;
};

// Which rejection rule the decision uses. softmax_threshold rejects when the
// top class probability falls below tau_l; cgd uses latent membership only;
// re uses reconstruction error only; cgd_and_re rejects on either signal.
enum class DetectorKind { softmax_threshold, cgd, re, cgd_and_re };

// Membership score of latent z under a class Gaussian:
//   P = 1 - prod_j erf(|z_j - m_j| / (sigma_j * sqrt(2)))
// the probability mass outside the axis-aligned box around the mean through z.
// Monotonically non-increasing in every |z_j - m_j|; 1 at the mean.
double membership_probability(const std::vector<double>& z, const ClassGaussian& g);

// Fits one Gaussian per class from correctly classified training latents.
// Throws calibration_error naming any class with fewer than two usable samples.
std::vector<ClassGaussian> fit_class_gaussians(const LadderModel& model,
                                               const LabeledImageSet& train);

// Per-sample L1 reconstruction errors.
std::vector<double> reconstruction_errors(const LadderModel& model, const LabeledImageSet& data);

// Nearest-rank percentile of the given errors (rank ceil(q*N), 1-indexed).
double nearest_rank_percentile(std::vector<double> values, double q);

// tau_r = 95th nearest-rank percentile of training reconstruction errors.
double calibrate_tau_r(const LadderModel& model, const LabeledImageSet& train,
                       double percentile = 0.95);

// Single-sample decision; image holds one image's pixels.
Decision decide(const std::vector<double>& image, const LadderModel& model,
                const std::vector<ClassGaussian>& gaussians, const DetectorThresholds& thresholds,
                DetectorKind kind = DetectorKind::cgd_and_re);

// Batched decisions over a whole set (same semantics, one pass per chunk).
std::vector<Decision> decide_batch(const LadderModel& model, const LabeledImageSet& data,
                                   const std::vector<ClassGaussian>& gaussians,
                                   const DetectorThresholds& thresholds,
                                   DetectorKind kind = DetectorKind::cgd_and_re);

}  // namespace cgdl
