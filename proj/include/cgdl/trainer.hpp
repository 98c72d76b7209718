#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cgdl/dataset.hpp"
#include "cgdl/ladder.hpp"
#include "cgdl/objective.hpp"

namespace cgdl {

struct TrainConfig {
    std::size_t epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 0.001;
    double momentum = 0.0;  // 0 keeps plain SGD
    double lambda = 100.0;
    // Classifier-only profile: decoder untouched, recon weight and beta zero.
    bool plain_classifier = false;
    std::size_t beta_anneal_epochs = 0;  // 0 means anneal across all epochs
    std::uint64_t seed = 1;
    std::size_t checkpoint_every = 0;  // 0 disables the callback

    void validate() const;
};

struct TrainLogEntry {
    std::size_t epoch = 0;  // 1-based
    LossBreakdown loss;     // sample-weighted epoch average
    double closed_set_train_accuracy = 0.0;
    double wall_time_sec = 0.0;  // cumulative, excluded from determinism checks
};

inline constexpr const char* kTrainLogHeader =
    "epoch,recon,kl_latent,kl_layers_sum,ce,beta,total,closed_set_train_accuracy,wall_time_sec";

std::string train_log_csv_row(const TrainLogEntry& e);

// One plain SGD update: p -= lr * p.grad. With momentum > 0 a velocity buffer
// (same order as params) holds v = momentum*v + grad and p -= lr * v.
void sgd_step(std::vector<Var>& params, double learning_rate,
              std::vector<Tensor>* velocity = nullptr, double momentum = 0.0);

using EpochCallback =
    std::function<void(std::size_t epoch, LadderModel& model, const std::vector<TrainLogEntry>&)>;

// Shuffle-batch-update loop. Deterministic given (model seed, config, data):
// every logged number except wall_time_sec is reproducible. Throws
// numeric_error naming the first non-finite loss term if training diverges.
std::vector<TrainLogEntry> train(LadderModel& model, const LabeledImageSet& data,
                                 const TrainConfig& cfg, const EpochCallback& on_checkpoint = {});

// Fraction of samples whose argmax class probability (from the deterministic
// latent) matches the label.
double closed_set_accuracy(const LadderModel& model, const LabeledImageSet& data);

// Deterministic argmax predictions for every sample.
std::vector<int> predict_labels(const LadderModel& model, const LabeledImageSet& data);

}  // namespace cgdl
