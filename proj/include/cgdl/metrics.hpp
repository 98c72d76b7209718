#pragma once

#include <string>
#include <vector>

#include "cgdl/dataset.hpp"
#include "cgdl/detector.hpp"
#include "cgdl/ladder.hpp"

namespace cgdl {

// Openness of an open-set problem: 1 - sqrt(2*n_train / (n_test + n_target)),
// all arguments counted in classes. 0 when the test set adds no classes.
double openness(std::size_t n_train_classes, std::size_t n_test_classes,
                std::size_t n_target_classes);

// (K+1) x (K+1) confusion matrix; index K is the unknown bucket.
struct ConfusionCounts {
    std::size_t classes = 0;  // K+1
    std::vector<std::size_t> counts;  // row-major, row = truth, col = prediction

    explicit ConfusionCounts(std::size_t k_plus_1 = 0)
        : classes(k_plus_1), counts(k_plus_1 * k_plus_1, 0) {}
    std::size_t& at(std::size_t truth, std::size_t pred) { return counts[truth * classes + pred]; }
    std::size_t at(std::size_t truth, std::size_t pred) const {
        return counts[truth * classes + pred];
    }
    std::size_t total() const;
};

// Builds the confusion matrix from truth labels (0..K, K = unknown) and
// detector decisions (rejections land in column K).
ConfusionCounts confusion_from_decisions(const std::vector<int>& truth,
                                         const std::vector<Decision>& decisions, std::size_t K);

// Unweighted mean F1 over all K+1 classes; empty classes contribute 0 per the
// zero-denominator convention (precision/recall/F1 are 0 when undefined).
double macro_f1(const ConfusionCounts& c);

// CSV with header sample_id,label,z_1..z_J and one row per sample, printed
// with enough digits to round-trip doubles.
void export_latents(const LadderModel& model, const LabeledImageSet& data,
                    const std::string& csv_path);

}  // namespace cgdl
