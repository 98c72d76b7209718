#include "cgdl/ladder.hpp"

#include <cmath>
#include <utility>

#include "cgdl/errors.hpp"

namespace cgdl {

namespace {

// softplus(x) = 1 at x = ln(e - 1); used to start variance heads at var = 1.
constexpr double kSoftplusInvOne = 0.5413248546129181;

LinearLayer init_linear(std::size_t in, std::size_t out, Rng& rng, double bias_init = 0.0) {
    Tensor w({in, out});
    const double stddev = std::sqrt(2.0 / static_cast<double>(in));
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.normal(0.0, stddev);
    Tensor b = Tensor::full({out}, bias_init);
    return LinearLayer{Var::param(std::move(w)), Var::param(std::move(b))};
}

Var init_prelu(double slope) { return Var::param(Tensor::scalar(slope)); }

void require_batch(const Var& x, std::size_t dim, const char* where) {
    if (x.value().ndim() != 2 || x.value().shape()[1] != dim)
        throw contract_error(std::string(where) + ": expected [n x " + std::to_string(dim) +
                             "], got " + x.value().shape_str());
}

void require_positive(const Tensor& var, const char* where) {
    for (std::size_t i = 0; i < var.size(); ++i)
        if (!(var[i] > 0.0))
            throw contract_error(std::string(where) + ": variance must be strictly positive");
}

}  // namespace

void LadderConfig::validate() const {
    if (input_dim == 0) throw config_error("ladder config: input_dim must be positive");
    if (layer_dims.empty()) throw config_error("ladder config: at least one rung is required");
    for (std::size_t d : layer_dims)
        if (d == 0) throw config_error("ladder config: layer widths must be positive");
    if (latent_dim == 0) throw config_error("ladder config: latent_dim must be positive");
    if (num_classes < 2) throw config_error("ladder config: need at least two classes");
    if (!std::isfinite(prelu_init)) throw config_error("ladder config: prelu_init must be finite");
}

LadderModel::LadderModel(LadderConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed, /*stream=*/1);
    const std::size_t L = cfg_.rungs();

    std::size_t prev = cfg_.input_dim;
    for (std::size_t l = 0; l < L; ++l) {
        const std::size_t width = cfg_.layer_dims[l];
        const std::size_t stat = cfg_.stat_dim(l);
        EncoderRung rung;
        rung.feat = init_linear(prev, width, rng);
        rung.prelu_slope = init_prelu(cfg_.prelu_init);
        rung.mu_head = init_linear(width, stat, rng);
        rung.var_head = init_linear(width, stat, rng, kSoftplusInvOne);
        enc_.push_back(std::move(rung));
        prev = width;
    }

    // Decoder stages mirror the encoder: the stage feeding rung l projects the
    // sample from rung l+1 into rung l's feature space.
    for (std::size_t i = 0; i + 1 < L; ++i) {
        const std::size_t rung = L - 2 - i;  // 0-based rung this stage produces
        const std::size_t in_dim = cfg_.stat_dim(rung + 1);
        const std::size_t width = cfg_.layer_dims[rung];
        DecoderStage st;
        st.feat = init_linear(in_dim, width, rng);
        st.prelu_slope = init_prelu(cfg_.prelu_init);
        st.mu_head = init_linear(width, cfg_.stat_dim(rung), rng);
        st.var_head = init_linear(width, cfg_.stat_dim(rung), rng, kSoftplusInvOne);
        dec_.push_back(std::move(st));
    }

    const std::size_t bottom_stat = cfg_.stat_dim(0);
    out_.feat = init_linear(bottom_stat, cfg_.layer_dims[0], rng);
    out_.prelu_slope = init_prelu(cfg_.prelu_init);
    out_.out = init_linear(cfg_.layer_dims[0], cfg_.input_dim, rng);

    classifier_ = init_linear(cfg_.latent_dim, cfg_.num_classes, rng);

    Tensor means({cfg_.num_classes, cfg_.latent_dim});
    for (std::size_t i = 0; i < means.size(); ++i) means[i] = rng.normal();
    class_means_ = Var::param(std::move(means));
}

Var LadderModel::linear(const LinearLayer& lin, const Var& x) const {
    return add_row_broadcast(matmul(x, lin.w), lin.b);
}

Var LadderModel::feature(const LinearLayer& lin, const Var& slope, const Var& x) const {
    return prelu(linear(lin, x), slope);
}

std::vector<StatsVar> LadderModel::encode_upward(const Var& x) const {
    require_batch(x, cfg_.input_dim, "encode_upward");
    std::vector<StatsVar> ups;
    ups.reserve(enc_.size());
    Var h = x;
    for (const EncoderRung& rung : enc_) {
        h = feature(rung.feat, rung.prelu_slope, h);
        ups.push_back(StatsVar{linear(rung.mu_head, h), softplus(linear(rung.var_head, h))});
    }
    return ups;
}

void LadderModel::decode_downward(const Var& z, const std::vector<StatsVar>* upward,
                                  PassMode mode, Rng* rng, ForwardTrace& trace) const {
    require_batch(z, cfg_.latent_dim, "decode_downward");
    if (mode == PassMode::train && rng == nullptr)
        throw contract_error("decode_downward: train mode needs an rng for sampling");
    if (upward && upward->size() != cfg_.rungs())
        throw contract_error("decode_downward: expected " + std::to_string(cfg_.rungs()) +
                             " upward stat entries, got " + std::to_string(upward->size()));

    Var s = z;
    const std::size_t L = cfg_.rungs();
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        const DecoderStage& st = dec_[i];
        const Var h = feature(st.feat, st.prelu_slope, s);
        if (!cfg_.ladder_enabled) {
            // Plain conditional-VAE profile: deterministic pass-through.
            s = linear(st.mu_head, h);
            continue;
        }
        StatsVar down{linear(st.mu_head, h), softplus(linear(st.var_head, h))};
        trace.downward.push_back(down);
        StatsVar use = down;
        if (upward) {
            use = precision_merge((*upward)[L - 2 - i], down);
            trace.merged.push_back(use);
        }
        if (mode == PassMode::train)
            s = reparameterize(use.mu, use.var, draw_eps(use.mu.shape(), *rng));
        else
            s = use.mu;
    }
    trace.recon = linear(out_.out, feature(out_.feat, out_.prelu_slope, s));
}

ForwardTrace LadderModel::forward(const Var& x, PassMode mode, Rng* rng,
                                  bool with_decoder) const {
    ForwardTrace trace;
    trace.upward = encode_upward(x);
    trace.top = trace.upward.back();
    if (mode == PassMode::train) {
        if (rng == nullptr) throw contract_error("forward: train mode needs an rng");
        trace.z = reparameterize(trace.top.mu, trace.top.var, draw_eps(trace.top.mu.shape(), *rng));
    } else {
        trace.z = trace.top.mu;
    }
    if (with_decoder) decode_downward(trace.z, &trace.upward, mode, rng, trace);
    trace.logits = linear(classifier_, trace.z);
    trace.probs = softmax_rows(trace.logits);
    return trace;
}

Var LadderModel::classify(const Var& z) const {
    require_batch(z, cfg_.latent_dim, "classify");
    return softmax_rows(linear(classifier_, z));
}

std::vector<double> LadderModel::class_mean_of(std::size_t k) const {
    if (k >= cfg_.num_classes)
        throw contract_error("class_mean_of: class " + std::to_string(k) + " out of range [0," +
                             std::to_string(cfg_.num_classes) + ")");
    const Tensor& m = class_means_.value();
    std::vector<double> row(cfg_.latent_dim);
    for (std::size_t j = 0; j < cfg_.latent_dim; ++j) row[j] = m.at(k, j);
    return row;
}

Tensor LadderModel::encode_latent(const Tensor& x) const {
    NoGradGuard guard;
    const auto ups = encode_upward(Var::constant(x));
    return ups.back().mu.value();
}

Tensor LadderModel::reconstruct(const Tensor& x) const {
    Tensor recon;
    encode_and_reconstruct(x, nullptr, &recon);
    return recon;
}

void LadderModel::encode_and_reconstruct(const Tensor& x, Tensor* z, Tensor* recon) const {
    NoGradGuard guard;
    ForwardTrace trace;
    trace.upward = encode_upward(Var::constant(x));
    trace.z = trace.upward.back().mu;
    if (z) *z = trace.z.value();
    if (recon) {
        decode_downward(trace.z, &trace.upward, PassMode::deterministic, nullptr, trace);
        *recon = trace.recon.value();
    }
}

std::vector<std::pair<std::string, Var>> LadderModel::named_parameters() const {
    std::vector<std::pair<std::string, Var>> out;
    const std::size_t L = cfg_.rungs();
    for (std::size_t l = 0; l < L; ++l) {
        const std::string p = "enc." + std::to_string(l) + ".";
        out.emplace_back(p + "feat.w", enc_[l].feat.w);
        out.emplace_back(p + "feat.b", enc_[l].feat.b);
        out.emplace_back(p + "prelu", enc_[l].prelu_slope);
        out.emplace_back(p + "mu.w", enc_[l].mu_head.w);
        out.emplace_back(p + "mu.b", enc_[l].mu_head.b);
        out.emplace_back(p + "var.w", enc_[l].var_head.w);
        out.emplace_back(p + "var.b", enc_[l].var_head.b);
    }
    for (std::size_t i = 0; i < dec_.size(); ++i) {
        const std::size_t rung = L - 2 - i;
        const std::string p = "dec." + std::to_string(rung) + ".";
        out.emplace_back(p + "feat.w", dec_[i].feat.w);
        out.emplace_back(p + "feat.b", dec_[i].feat.b);
        out.emplace_back(p + "prelu", dec_[i].prelu_slope);
        out.emplace_back(p + "mu.w", dec_[i].mu_head.w);
        out.emplace_back(p + "mu.b", dec_[i].mu_head.b);
        out.emplace_back(p + "var.w", dec_[i].var_head.w);
        out.emplace_back(p + "var.b", dec_[i].var_head.b);
    }
    out.emplace_back("dec.out.feat.w", out_.feat.w);
    out.emplace_back("dec.out.feat.b", out_.feat.b);
    out.emplace_back("dec.out.prelu", out_.prelu_slope);
    out.emplace_back("dec.out.w", out_.out.w);
    out.emplace_back("dec.out.b", out_.out.b);
    out.emplace_back("cls.w", classifier_.w);
    out.emplace_back("cls.b", classifier_.b);
    out.emplace_back("class_means", class_means_);
    return out;
}

std::vector<Var> LadderModel::parameters() const {
    std::vector<Var> out;
    for (const auto& nv : named_parameters()) out.push_back(nv.second);
    return out;
}

StatsVar precision_merge(const StatsVar& a, const StatsVar& b) {
    if (!a.mu.value().same_shape(b.mu.value()) || !a.var.value().same_shape(b.var.value()) ||
        !a.mu.value().same_shape(a.var.value()))
        throw contract_error("precision_merge: stat shapes disagree");
    require_positive(a.var.value(), "precision_merge");
    require_positive(b.var.value(), "precision_merge");
    const Var pa = reciprocal(a.var);
    const Var pb = reciprocal(b.var);
    const Var qvar = reciprocal(add(pa, pb));
    const Var qmu = mul(add(mul(a.mu, pa), mul(b.mu, pb)), qvar);
    return StatsVar{qmu, qvar};
}

Var reparameterize(const Var& mu, const Var& var, const Tensor& eps) {
    if (!mu.value().same_shape(var.value()))
        throw contract_error("reparameterize: mu/var shapes disagree");
    if (!mu.value().same_shape(eps))
        throw contract_error("reparameterize: eps shape " + eps.shape_str() + " does not match " +
                             mu.value().shape_str());
    require_positive(var.value(), "reparameterize");
    return add(mu, mul(sqrt(var), Var::constant(eps)));
}

Tensor draw_eps(const std::vector<std::size_t>& shape, Rng& rng) {
    Tensor eps(shape);
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = rng.normal();
    return eps;
}

}  // namespace cgdl
