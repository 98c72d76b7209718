#pragma once

#include <cstddef>
#include <vector>

#include "cgdl/autodiff.hpp"
#include "cgdl/ladder.hpp"
#include "cgdl/tensor.hpp"

namespace cgdl {

// Per-batch loss decomposition. total = recon_weight*recon
//   + beta*(kl_latent + sum(kl_layers))/(1 + |kl_layers|) + lambda*ce.
struct LossBreakdown {
    double recon = 0.0;
    double kl_latent = 0.0;
    std::vector<double> kl_layers;  // one entry per merged middle rung
    double ce = 0.0;
    double beta = 0.0;
    double lambda = 0.0;
    double recon_weight = 1.0;
    double total = 0.0;

    double kl_layers_sum() const;
};

struct LossResult {
    Var total;  // scalar node for backward()
    LossBreakdown parts;
};

// Mean over the batch of the per-sample L1 reconstruction distance.
Var recon_l1(const Tensor& x, const Var& recon);

// KL from N(mu, diag var) to the class Gaussian N(mu_k, I), batch mean:
//   0.5 * sum_j((mu - mu_k)^2 + var - log var - 1).
// mu_k holds one class-mean row per batch row.
Var kl_conditional(const Var& mu, const Var& var, const Var& mu_k);

// KL from N(q.mu, diag q.var) to N(p.mu, diag p.var), batch mean:
//   sum_j(0.5 log(p.var/q.var) + (q.var + (q.mu - p.mu)^2)/(2 p.var) - 0.5).
Var kl_gaussian_pair(const StatsVar& q, const StatsVar& p);

// Mean negative log-likelihood of the labels under softmax(logits), computed
// on the log-sum-exp path. labels[i] must lie in [0, logits.cols).
Var cross_entropy(const Var& logits, const std::vector<int>& labels);

// Linear warm-up: epoch/total_epochs clamped to [0, 1].
double beta_schedule(std::size_t epoch, std::size_t total_epochs);

// Assembles the total training loss from a forward trace. When the trace has
// no reconstruction (classifier-only profile) the recon weight must be zero.
LossResult total_loss(const LadderModel& model, const ForwardTrace& trace, const Tensor& x,
                      const std::vector<int>& labels, double beta, double lambda,
                      double recon_weight = 1.0);

}  // namespace cgdl
