#include "cgdl/objective.hpp"

#include <cmath>
#include <string>

#include "cgdl/errors.hpp"
#include "cgdl/kernels.hpp"

namespace cgdl {

double LossBreakdown::kl_layers_sum() const {
    double s = 0.0;
    for (double v : kl_layers) s += v;
    return s;
}

Var recon_l1(const Tensor& x, const Var& recon) {
    if (!recon.value().same_shape(x))
        throw contract_error("recon_l1: shape mismatch " + recon.value().shape_str() + " vs " +
                             x.shape_str());
    const double batch = static_cast<double>(x.rows());
    return scalar_mul(sum(abs(sub(recon, Var::constant(x)))), 1.0 / batch);
}

Var kl_conditional(const Var& mu, const Var& var, const Var& mu_k) {
    if (!mu.value().same_shape(var.value()) || !mu.value().same_shape(mu_k.value()))
        throw contract_error("kl_conditional: mu/var/mu_k shapes disagree");
    for (std::size_t i = 0; i < var.value().size(); ++i)
        if (!(var.value()[i] > 0.0))
            throw contract_error("kl_conditional: variance must be strictly positive");
    const double batch = static_cast<double>(mu.value().rows());
    const Var d2 = square(sub(mu, mu_k));
    const Var inner = add_scalar(sub(add(d2, var), log(var)), -1.0);
    return scalar_mul(sum(inner), 0.5 / batch);
}

Var kl_gaussian_pair(const StatsVar& q, const StatsVar& p) {
    if (!q.mu.value().same_shape(p.mu.value()) || !q.var.value().same_shape(p.var.value()) ||
        !q.mu.value().same_shape(q.var.value()))
        throw contract_error("kl_gaussian_pair: stat shapes disagree");
    for (std::size_t i = 0; i < q.var.value().size(); ++i)
        if (!(q.var.value()[i] > 0.0) || !(p.var.value()[i] > 0.0))
            throw contract_error("kl_gaussian_pair: variances must be strictly positive");
    const double batch = static_cast<double>(q.mu.value().rows());
    const Var log_ratio = scalar_mul(sub(log(p.var), log(q.var)), 0.5);
    const Var num = add(q.var, square(sub(q.mu, p.mu)));
    const Var frac = scalar_mul(mul(num, reciprocal(p.var)), 0.5);
    const Var inner = add_scalar(add(log_ratio, frac), -0.5);
    return scalar_mul(sum(inner), 1.0 / batch);
}

Var cross_entropy(const Var& logits, const std::vector<int>& labels) {
    if (logits.value().ndim() != 2)
        throw contract_error("cross_entropy: logits must be [n x classes]");
    const std::size_t rows = logits.value().shape()[0];
    const std::size_t classes = logits.value().shape()[1];
    if (labels.size() != rows)
        throw contract_error("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                             std::to_string(rows) + " rows");
    for (int y : labels)
        if (y < 0 || static_cast<std::size_t>(y) >= classes)
            throw contract_error("cross_entropy: label " + std::to_string(y) +
                                 " out of range [0," + std::to_string(classes) + ")");

    // Forward on the log-sum-exp path; softmax rows are cached for backward.
    Tensor probs({rows, classes});
    double loss = 0.0;
    for (std::size_t i = 0; i < rows; ++i) {
        const double* x = logits.value().data() + i * classes;
        double* pr = probs.data() + i * classes;
        double mx = x[0];
        for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, x[j]);
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) {
            pr[j] = std::exp(x[j] - mx);
            z += pr[j];
        }
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < classes; ++j) pr[j] /= z;
        loss += lse - x[static_cast<std::size_t>(labels[i])];
    }
    loss /= static_cast<double>(rows);

    auto ln = logits.node();
    auto idx = labels;
    return make_op("cross_entropy", Tensor::scalar(loss), {logits},
                   [ln, idx, probs, rows, classes](detail::Node& self) {
                       if (!ln->requires_grad) return;
                       ln->ensure_grad();
                       const double g = self.grad[0] / static_cast<double>(rows);
                       double* dst = ln->grad.data();
                       const double* pr = probs.data();
                       for (std::size_t i = 0; i < rows; ++i) {
                           for (std::size_t j = 0; j < classes; ++j)
                               dst[i * classes + j] += g * pr[i * classes + j];
                           dst[i * classes + static_cast<std::size_t>(idx[i])] -= g;
                       }
                   });
}

double beta_schedule(std::size_t epoch, std::size_t total_epochs) {
    if (total_epochs == 0) return 1.0;
    const double b = static_cast<double>(epoch) / static_cast<double>(total_epochs);
    return b < 0.0 ? 0.0 : (b > 1.0 ? 1.0 : b);
}

LossResult total_loss(const LadderModel& model, const ForwardTrace& trace, const Tensor& x,
                      const std::vector<int>& labels, double beta, double lambda,
                      double recon_weight) {
    if (!trace.logits.defined()) throw contract_error("total_loss: trace has no logits");
    if (!trace.recon.defined() && recon_weight != 0.0)
        throw contract_error("total_loss: trace has no reconstruction but recon_weight != 0");
    if (trace.merged.size() != trace.downward.size())
        throw contract_error("total_loss: merged/downward stat lists disagree");

    LossResult r;
    r.parts.beta = beta;
    r.parts.lambda = lambda;
    r.parts.recon_weight = recon_weight;

    const Var ce = cross_entropy(trace.logits, labels);
    r.parts.ce = ce.value()[0];

    Var total = scalar_mul(ce, lambda);
    // A zero beta (classifier-only profile) removes the KL group from both
    // the objective and the reported breakdown.
    if (beta != 0.0) {
        const Var muk = embedding_rows(model.class_means(), labels);
        const Var kl_lat = kl_conditional(trace.top.mu, trace.top.var, muk);
        r.parts.kl_latent = kl_lat.value()[0];

        Var kl_sum = kl_lat;
        for (std::size_t i = 0; i < trace.merged.size(); ++i) {
            const Var term = kl_gaussian_pair(trace.merged[i], trace.downward[i]);
            r.parts.kl_layers.push_back(term.value()[0]);
            kl_sum = add(kl_sum, term);
        }
        const double n_terms = 1.0 + static_cast<double>(trace.merged.size());
        total = add(scalar_mul(kl_sum, beta / n_terms), total);
    }
    if (trace.recon.defined()) {
        const Var rec = recon_l1(x, trace.recon);
        r.parts.recon = rec.value()[0];
        if (recon_weight != 0.0) total = add(total, scalar_mul(rec, recon_weight));
    }
    r.total = total;
    r.parts.total = total.value()[0];
    return r;
}

}  // namespace cgdl
