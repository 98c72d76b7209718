#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cgdl/autodiff.hpp"
#include "cgdl/rng.hpp"
#include "cgdl/tensor.hpp"

namespace cgdl {

// ============================================================================
// Ladder variational autoencoder with a class classifier on the latent code.
//
// Upward pass, rung l = 1..L:
//   x_l   = PReLU(W_feat x_{l-1} + b)
//   mu_l  = W_mu x_l + b_mu
//   var_l = softplus(W_var x_l + b_var)
// The top rung's heads produce the latent-code statistics (latent_dim wide);
// middle rungs produce statistics as wide as their feature layer.
//
// Downward pass, from the latent sample z: each middle stage projects the
// sample from above into its feature space, emits its own (mu~, var~), merges
// them with the matching upward statistics by precision weighting, and samples
// the merged Gaussian. The output stage maps the bottom sample back to input
// space. Deterministic mode replaces every sample with its mean.
// ============================================================================

enum class PassMode { train, deterministic };

struct LadderConfig {
    std::size_t input_dim = 0;
    std::vector<std::size_t> layer_dims;  // feature widths, rung 1..L
    std::size_t latent_dim = 32;
    std::size_t num_classes = 0;
    double prelu_init = 0.25;
    // When false, middle rungs carry no stochastic statistics: the decoder
    // passes its mu-head outputs straight through (plain conditional VAE).
    bool ladder_enabled = true;

    void validate() const;
    std::size_t rungs() const { return layer_dims.size(); }
    // Stochastic width of rung l (0-based): feature width below the top,
    // latent_dim at the top.
    std::size_t stat_dim(std::size_t l) const {
        return l + 1 == layer_dims.size() ? latent_dim : layer_dims[l];
    }
};

// One diagonal Gaussian per tensor row: mu and var are [batch x dim].
struct StatsVar {
    Var mu;
    Var var;
};

struct ForwardTrace {
    // Upward statistics, one entry per rung; the last entry is the top
    // (latent_dim wide) pair used for the latent code.
    std::vector<StatsVar> upward;
    // Decoder-side and merged statistics for the middle rungs only
    // (rung L-1 first, rung 1 last); empty when ladder merging is off.
    std::vector<StatsVar> downward;
    std::vector<StatsVar> merged;
    StatsVar top;  // alias of upward.back()
    Var z;         // latent sample (train) or top mean (deterministic)
    Var recon;     // [batch x input_dim]
    Var logits;    // [batch x num_classes]
    Var probs;     // softmax of logits
};

struct LinearLayer {
    Var w;  // [in x out]
    Var b;  // [out]
};

struct EncoderRung {
    LinearLayer feat;
    Var prelu_slope;
    LinearLayer mu_head;
    LinearLayer var_head;
};

struct DecoderStage {
    LinearLayer feat;
    Var prelu_slope;
    LinearLayer mu_head;
    LinearLayer var_head;
};

struct OutputStage {
    LinearLayer feat;
    Var prelu_slope;
    LinearLayer out;
};

class LadderModel {
  public:
    LadderModel(LadderConfig cfg, std::uint64_t seed);

    const LadderConfig& config() const { return cfg_; }

    // Per-rung upward statistics; result.back() is the latent pair.
    std::vector<StatsVar> encode_upward(const Var& x) const;

    // Downward pass from a latent sample. With upward statistics present,
    // middle rungs merge; without them the rungs run generatively from their
    // own statistics. Fills downward/merged/recon on the trace.
    void decode_downward(const Var& z, const std::vector<StatsVar>* upward, PassMode mode,
                         Rng* rng, ForwardTrace& trace) const;

    // Full pass: encode, reparameterize (or take the mean), decode, classify.
    // with_decoder = false skips the downward pass entirely (classifier-only
    // training profile); the trace then has no recon/downward/merged entries.
    ForwardTrace forward(const Var& x, PassMode mode, Rng* rng, bool with_decoder = true) const;

    // Class-probability rows for a latent batch.
    Var classify(const Var& z) const;

    // The K x latent_dim matrix of learnable class means.
    const Var& class_means() const { return class_means_; }
    // Row k as a plain vector; throws on out-of-range k.
    std::vector<double> class_mean_of(std::size_t k) const;

    // Deterministic conveniences for plain-tensor batches (no tape).
    Tensor encode_latent(const Tensor& x) const;           // [n x latent_dim]
    Tensor reconstruct(const Tensor& x) const;             // [n x input_dim]
    void encode_and_reconstruct(const Tensor& x, Tensor* z, Tensor* recon) const;

    // Parameters in a fixed, documented order (checkpoint layout order).
    std::vector<std::pair<std::string, Var>> named_parameters() const;
    std::vector<Var> parameters() const;

  private:
    Var feature(const LinearLayer& lin, const Var& slope, const Var& x) const;
    Var linear(const LinearLayer& lin, const Var& x) const;

    LadderConfig cfg_;
    std::vector<EncoderRung> enc_;    // rung 1..L
    std::vector<DecoderStage> dec_;   // stages for rungs L-1..1 (empty when L == 1)
    OutputStage out_;
    LinearLayer classifier_;
    Var class_means_;  // [num_classes x latent_dim]
};

// Precision-weighted combination of two diagonal Gaussians:
//   var = 1 / (1/var_a + 1/var_b)
//   mu  = (mu_a/var_a + mu_b/var_b) * var
// Symmetric in its arguments; variances must be strictly positive.
StatsVar precision_merge(const StatsVar& a, const StatsVar& b);

// z = mu + sqrt(var) ⊙ eps. Differentiable through mu and var; eps is data.
Var reparameterize(const Var& mu, const Var& var, const Tensor& eps);

// Standard-normal tensor of the given shape.
Tensor draw_eps(const std::vector<std::size_t>& shape, Rng& rng);

}  // namespace cgdl
