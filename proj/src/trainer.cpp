#include "cgdl/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

#include "cgdl/errors.hpp"
#include "cgdl/kernels.hpp"

namespace cgdl {

void TrainConfig::validate() const {
    if (epochs == 0) throw config_error("train config: epochs must be positive");
    if (batch_size == 0) throw config_error("train config: batch_size must be positive");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw config_error("train config: learning_rate must be finite and non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw config_error("train config: momentum must lie in [0,1)");
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
        throw config_error("train config: lambda must be finite and nonnegative");
}

std::string train_log_csv_row(const TrainLogEntry& e) {
    std::ostringstream os;
    os.precision(17);
    os << e.epoch << ',' << e.loss.recon << ',' << e.loss.kl_latent << ','
       << e.loss.kl_layers_sum() << ',' << e.loss.ce << ',' << e.loss.beta << ',' << e.loss.total
       << ',' << e.closed_set_train_accuracy << ',' << e.wall_time_sec;
    return os.str();
}

void sgd_step(std::vector<Var>& params, double learning_rate, std::vector<Tensor>* velocity,
              double momentum) {
    if (momentum > 0.0) {
        if (velocity == nullptr)
            throw contract_error("sgd_step: momentum requires a velocity buffer");
        if (velocity->empty()) velocity->resize(params.size());
        if (velocity->size() != params.size())
            throw contract_error("sgd_step: velocity buffer holds " +
                                 std::to_string(velocity->size()) + " tensors for " +
                                 std::to_string(params.size()) + " parameters");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Var& p = params[i];
        const Tensor& g = p.grad();
        if (momentum > 0.0) {
            Tensor& v = (*velocity)[i];
            if (v.size() != g.size()) v = Tensor(p.value().shape());
            for (std::size_t j = 0; j < v.size(); ++j)
                v[j] = momentum * v[j] + g[j];
            kernels::active().axpy(-learning_rate, v.data(), p.mutable_value().data(), v.size());
        } else {
            kernels::active().axpy(-learning_rate, g.data(), p.mutable_value().data(), g.size());
        }
    }
}

namespace {

// Throws naming the first non-finite component, in reporting order.
void require_finite(const LossBreakdown& parts, std::size_t epoch, std::size_t batch) {
    auto fail = [&](const std::string& term) {
        throw numeric_error("training aborted: non-finite " + term + " at epoch " +
                            std::to_string(epoch) + ", batch " + std::to_string(batch));
    };
    if (!std::isfinite(parts.recon)) fail("recon");
    if (!std::isfinite(parts.kl_latent)) fail("kl_latent");
    for (std::size_t i = 0; i < parts.kl_layers.size(); ++i)
        if (!std::isfinite(parts.kl_layers[i])) fail("kl_layers[" + std::to_string(i) + "]");
    if (!std::isfinite(parts.ce)) fail("ce");
    if (!std::isfinite(parts.total)) fail("total");
}

}  // namespace

std::vector<TrainLogEntry> train(LadderModel& model, const LabeledImageSet& data,
                                 const TrainConfig& cfg, const EpochCallback& on_checkpoint) {
    cfg.validate();
    if (data.size() == 0) throw config_error("train: empty dataset");
    if (data.image_pixels() != model.config().input_dim)
        throw config_error("train: dataset images have " + std::to_string(data.image_pixels()) +
                           " pixels but the model expects " +
                           std::to_string(model.config().input_dim));
    const int K = static_cast<int>(model.config().num_classes);
    for (int y : data.labels)
        if (y < 0 || y >= K)
            throw config_error("train: label " + std::to_string(y) + " outside [0," +
                               std::to_string(K) + ")");

    const std::size_t anneal = cfg.beta_anneal_epochs ? cfg.beta_anneal_epochs : cfg.epochs;
    const double recon_weight = cfg.plain_classifier ? 0.0 : 1.0;

    std::vector<Var> params = model.parameters();
    std::vector<Tensor> velocity(cfg.momentum > 0.0 ? params.size() : 0);

    Rng rng(cfg.seed, /*stream=*/2);
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<TrainLogEntry> logs;
    const auto t0 = std::chrono::steady_clock::now();

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const double beta = cfg.plain_classifier ? 0.0 : beta_schedule(epoch, anneal);
        rng.shuffle(order);

        LossBreakdown epoch_avg;
        epoch_avg.beta = beta;
        epoch_avg.lambda = cfg.lambda;
        epoch_avg.recon_weight = recon_weight;
        double seen = 0.0;

        for (std::size_t start = 0, batch_no = 0; start < order.size();
             start += cfg.batch_size, ++batch_no) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<std::size_t> idx(order.begin() + start, order.begin() + end);
            const Tensor x = data.batch(idx);
            std::vector<int> labels(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = data.labels[idx[i]];

            const ForwardTrace trace = model.forward(Var::constant(x), PassMode::train, &rng,
                                                     /*with_decoder=*/!cfg.plain_classifier);
            const LossResult res =
                total_loss(model, trace, x, labels, beta, cfg.lambda, recon_weight);
            require_finite(res.parts, epoch, batch_no);

            for (Var& p : params) p.zero_grad();
            backward(res.total);
            sgd_step(params, cfg.learning_rate, cfg.momentum > 0.0 ? &velocity : nullptr,
                     cfg.momentum);

            const double w = static_cast<double>(idx.size());
            epoch_avg.recon += w * res.parts.recon;
            epoch_avg.kl_latent += w * res.parts.kl_latent;
            epoch_avg.ce += w * res.parts.ce;
            epoch_avg.total += w * res.parts.total;
            if (epoch_avg.kl_layers.size() < res.parts.kl_layers.size())
                epoch_avg.kl_layers.resize(res.parts.kl_layers.size(), 0.0);
            for (std::size_t i = 0; i < res.parts.kl_layers.size(); ++i)
                epoch_avg.kl_layers[i] += w * res.parts.kl_layers[i];
            seen += w;
        }

        epoch_avg.recon /= seen;
        epoch_avg.kl_latent /= seen;
        epoch_avg.ce /= seen;
        epoch_avg.total /= seen;
        for (double& v : epoch_avg.kl_layers) v /= seen;

        TrainLogEntry entry;
        entry.epoch = epoch;
        entry.loss = epoch_avg;
        entry.closed_set_train_accuracy = closed_set_accuracy(model, data);
        entry.wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        logs.push_back(entry);

        if (on_checkpoint && cfg.checkpoint_every > 0 &&
            (epoch % cfg.checkpoint_every == 0 || epoch == cfg.epochs))
            on_checkpoint(epoch, model, logs);
    }
    return logs;
}

std::vector<int> predict_labels(const LadderModel& model, const LabeledImageSet& data) {
    if (data.size() == 0) throw config_error("predict_labels: empty dataset");
    NoGradGuard guard;
    const std::size_t chunk = 256;
    std::vector<int> pred(data.size());
    const std::size_t K = model.config().num_classes;
    for (std::size_t start = 0; start < data.size(); start += chunk) {
        const std::size_t end = std::min(data.size(), start + chunk);
        std::vector<std::size_t> idx(end - start);
        std::iota(idx.begin(), idx.end(), start);
        const Tensor z = model.encode_latent(data.batch(idx));
        const Tensor probs = model.classify(Var::constant(z)).value();
        for (std::size_t i = 0; i < idx.size(); ++i) {
            const double* row = probs.data() + i * K;
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (row[k] > row[best]) best = k;
            pred[start + i] = static_cast<int>(best);
        }
    }
    return pred;
}

double closed_set_accuracy(const LadderModel& model, const LabeledImageSet& data) {
    const std::vector<int> pred = predict_labels(model, data);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i)
        if (pred[i] == data.labels[i]) ++hits;
    return static_cast<double>(hits) / static_cast<double>(data.size());
}

}  // namespace cgdl
