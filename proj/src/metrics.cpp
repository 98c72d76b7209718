#include "cgdl/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "cgdl/errors.hpp"

namespace cgdl {

double openness(std::size_t n_train_classes, std::size_t n_test_classes,
                std::size_t n_target_classes) {
    if (n_train_classes == 0 || n_test_classes == 0 || n_target_classes == 0)
        throw config_error("openness: class counts must be positive");
    const double num = 2.0 * static_cast<double>(n_train_classes);
    const double den = static_cast<double>(n_test_classes + n_target_classes);
    if (num > den)
        throw config_error("openness: 2*n_train exceeds n_test + n_target");
    return 1.0 - std::sqrt(num / den);
}

std::size_t ConfusionCounts::total() const {
    std::size_t t = 0;
    for (std::size_t v : counts) t += v;
    return t;
}

ConfusionCounts confusion_from_decisions(const std::vector<int>& truth,
                                         const std::vector<Decision>& decisions, std::size_t K) {
    if (truth.size() != decisions.size())
        throw contract_error("confusion_from_decisions: " + std::to_string(truth.size()) +
                             " labels vs " + std::to_string(decisions.size()) + " decisions");
    ConfusionCounts c(K + 1);
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const int t = truth[i];
        if (t < 0 || static_cast<std::size_t>(t) > K)
            throw contract_error("confusion_from_decisions: truth label " + std::to_string(t) +
                                 " outside [0," + std::to_string(K) + "]");
        std::size_t p = K;
        if (decisions[i].verdict == Verdict::known) {
            if (!decisions[i].predicted_label)
                throw contract_error("confusion_from_decisions: known verdict without a label");
            const int label = *decisions[i].predicted_label;
            if (label < 0 || static_cast<std::size_t>(label) >= K)
                throw contract_error("confusion_from_decisions: predicted label " +
                                     std::to_string(label) + " outside [0," + std::to_string(K) +
                                     ")");
            p = static_cast<std::size_t>(label);
        }
        ++c.at(static_cast<std::size_t>(t), p);
    }
    return c;
}

double macro_f1(const ConfusionCounts& c) {
    if (c.classes == 0) throw contract_error("macro_f1: empty confusion matrix");
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < c.classes; ++k) {
        const double tp = static_cast<double>(c.at(k, k));
        double fp = 0.0, fn = 0.0;
        for (std::size_t j = 0; j < c.classes; ++j) {
            if (j == k) continue;
            fp += static_cast<double>(c.at(j, k));
            fn += static_cast<double>(c.at(k, j));
        }
        const double precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
        const double recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
        const double f1 =
            precision + recall > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
        f1_sum += f1;
    }
    return f1_sum / static_cast<double>(c.classes);
}

void export_latents(const LadderModel& model, const LabeledImageSet& data,
                    const std::string& csv_path) {
    std::ofstream out(csv_path, std::ios::trunc);
    if (!out) throw io_error("cannot create " + csv_path);
    const std::size_t J = model.config().latent_dim;
    out << "sample_id,label";
    for (std::size_t j = 1; j <= J; ++j) out << ",z_" << j;
    out << '\n';
    if (data.size() > 0) {
        const std::size_t chunk = 256;
        char buf[32];
        for (std::size_t start = 0; start < data.size(); start += chunk) {
            const std::size_t end = std::min(data.size(), start + chunk);
            std::vector<std::size_t> idx(end - start);
            std::iota(idx.begin(), idx.end(), start);
            const Tensor z = model.encode_latent(data.batch(idx));
            for (std::size_t i = 0; i < idx.size(); ++i) {
                out << (start + i) << ',' << data.labels[start + i];
                for (std::size_t j = 0; j < J; ++j) {
                    std::snprintf(buf, sizeof buf, "%.17g", z[i * J + j]);
                    out << ',' << buf;
                }
                out << '\n';
            }
        }
    }
    if (!out) throw io_error("failed writing " + csv_path);
}

}  // namespace cgdl
