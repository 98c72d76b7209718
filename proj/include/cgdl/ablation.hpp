#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cgdl/detector.hpp"
#include "cgdl/trainer.hpp"

namespace cgdl {

// The seven standard baselines: which architecture profile trains and which
// rejection rule evaluates.
struct AblationVariant {
    std::string name;
    bool ladder = true;
    bool plain_classifier = false;
    DetectorKind detector = DetectorKind::cgd_and_re;
};

const std::vector<std::string>& ablation_variant_names();  // "I".."VII"
AblationVariant ablation_variant(const std::string& name);

// Unseen-class count that realizes a requested openness level with K known
// classes and n_target = n_train = K: U = round(2K * (1/(1-o)^2 - 1)).
std::size_t unseen_classes_for_openness(double level, std::size_t known_classes);

struct AblationSpec {
    // Synthetic data profile per cell.
    std::size_t known_classes = 4;
    std::size_t train_per_class = 150;
    std::size_t test_per_class = 50;
    std::size_t image_side = 12;
    double noise_sigma = 0.1;
    // Model profile.
    std::vector<std::size_t> layer_dims = {48, 24};
    std::size_t latent_dim = 8;
    double prelu_init = 0.25;
    // Training profile; seed is overridden per cell.
    TrainConfig train;
    // Grid.
    std::vector<std::string> variants;
    std::vector<double> openness_levels;
    std::vector<std::uint64_t> seeds;
    std::size_t threads = 1;
};

struct AblationCell {
    std::string variant;
    double openness_level = 0.0;  // requested
    double openness_actual = 0.0;
    std::uint64_t seed = 0;
    std::size_t unknown_classes = 0;
    double macro_f1 = 0.0;
    double closed_set_accuracy = 0.0;
    bool failed = false;
    std::string diagnostic;
};

// Trains and evaluates every (variant, openness, seed) cell. Data and model
// initialization depend only on (openness, seed), so variants at the same
// grid point see identical inputs. A failing cell is recorded with its
// diagnostic instead of aborting the grid. Cells may run on spec.threads
// worker threads; results are deterministic regardless of thread count.
std::vector<AblationCell> run_ablation(const AblationSpec& spec);

struct AblationSummaryRow {
    std::string variant;
    double openness_level = 0.0;
    std::size_t cells = 0;  // successful cells aggregated
    double mean_macro_f1 = 0.0;
    double std_macro_f1 = 0.0;
};

// Mean/population-std of macro-F1 per (variant, openness), in grid order.
std::vector<AblationSummaryRow> summarize_ablation(const AblationSpec& spec,
                                                   const std::vector<AblationCell>& cells);

}  // namespace cgdl
