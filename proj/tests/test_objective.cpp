#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "cgdl/errors.hpp"
#include "cgdl/objective.hpp"
#include "testutil.hpp"

using namespace cgdl;
using testutil::gradcheck;
using testutil::mc_kl_diag;
using testutil::random_positive;
using testutil::random_tensor;

TEST_CASE("recon_l1 is the batch mean of per-sample L1 distances") {
    const Tensor x({2, 3}, {0.0, 1.0, 0.5, 0.2, 0.2, 0.2});
    Var recon = Var::param(Tensor({2, 3}, {0.5, 0.5, 0.5, 0.2, 0.0, 1.0}));
    const double expect = ((0.5 + 0.5 + 0.0) + (0.0 + 0.2 + 0.8)) / 2.0;
    CHECK(recon_l1(x, recon).value()[0] == doctest::Approx(expect).epsilon(1e-12));

    Rng rng(21, 0);
    Var r2 = Var::param(random_tensor({3, 4}, rng));
    const Tensor x2 = random_tensor({3, 4}, rng);
    auto g = gradcheck([&] { return recon_l1(x2, r2); }, {r2});
    CAPTURE(g.worst);
    CHECK(g.max_rel_err < 1e-6);
}

TEST_CASE("kl_conditional matches hand values and Monte-Carlo estimates") {
    // One row, one dim: mu=1, var=1 against class mean 0:
    // 0.5 * ((1-0)^2 + 1 - log 1 - 1) = 0.5.
    {
        Var mu = Var::constant(Tensor({1, 1}, {1.0}));
        Var var = Var::constant(Tensor({1, 1}, {1.0}));
        Var mu_k = Var::constant(Tensor({1, 1}, {0.0}));
        CHECK(kl_conditional(mu, var, mu_k).value()[0] == doctest::Approx(0.5).epsilon(1e-12));
    }
    // q == p == N(0, I) gives zero.
    {
        Var mu = Var::constant(Tensor::zeros({2, 3}));
        Var var = Var::constant(Tensor::full({2, 3}, 1.0));
        Var mu_k = Var::constant(Tensor::zeros({2, 3}));
        CHECK(std::abs(kl_conditional(mu, var, mu_k).value()[0]) < 1e-12);
    }
    // Random instances against the Monte-Carlo oracle (unit target variance).
    Rng rng(22, 0);
    for (int i = 0; i < 5; ++i) {
        const std::size_t dim = 3;
        std::vector<double> mu(dim), var(dim), mu_k(dim), ones(dim, 1.0);
        for (std::size_t j = 0; j < dim; ++j) {
            mu[j] = -1.5 + 3.0 * rng.uniform();
            var[j] = 0.3 + 2.0 * rng.uniform();
            mu_k[j] = -1.5 + 3.0 * rng.uniform();
        }
        Var vmu = Var::constant(Tensor({1, dim}, std::vector<double>(mu)));
        Var vvar = Var::constant(Tensor({1, dim}, std::vector<double>(var)));
        Var vmuk = Var::constant(Tensor({1, dim}, std::vector<double>(mu_k)));
        const double closed = kl_conditional(vmu, vvar, vmuk).value()[0];
        const auto mc = mc_kl_diag(mu, var, mu_k, ones, 200000, 1000 + i);
        CAPTURE(closed);
        CAPTURE(mc.mean);
        CHECK(std::abs(closed - mc.mean) < 4.0 * mc.se + 1e-9);
        CHECK(closed >= -1e-12);  // KL nonnegativity
    }
    // Gradients flow through mu, var, and the class means.
    Rng prng(24, 0);
    Var mu = Var::param(random_tensor({3, 2}, prng));
    Var var = Var::param(random_positive({3, 2}, prng, 0.3, 2.0));
    Var mu_k = Var::param(random_tensor({3, 2}, prng));
    auto g = gradcheck([&] { return kl_conditional(mu, var, mu_k); }, {mu, var, mu_k});
    CAPTURE(g.worst);
    CHECK(g.max_rel_err < 1e-6);
}

TEST_CASE("kl_gaussian_pair matches hand values, Monte-Carlo, and stays nonnegative") {
    auto make = [](std::vector<double> mu, std::vector<double> var) {
        StatsVar s;
        const std::size_t d = mu.size();
        s.mu = Var::param(Tensor({1, d}, std::move(mu)));
        s.var = Var::param(Tensor({1, d}, std::move(var)));
        return s;
    };
    // KL(N(0,1) || N(1,1)) = 0.5.
    CHECK(kl_gaussian_pair(make({0.0}, {1.0}), make({1.0}, {1.0})).value()[0] ==
          doctest::Approx(0.5).epsilon(1e-12));
    // Identical distributions give zero.
    CHECK(std::abs(kl_gaussian_pair(make({0.3, -0.7}, {0.8, 1.2}), make({0.3, -0.7}, {0.8, 1.2}))
                       .value()[0]) < 1e-12);
    // Scale-only case: KL(N(0,2) || N(0,1)) = 0.5*(2 - ln 2 - 1).
    CHECK(kl_gaussian_pair(make({0.0}, {2.0}), make({0.0}, {1.0})).value()[0] ==
          doctest::Approx(0.5 * (2.0 - std::log(2.0) - 1.0)).epsilon(1e-12));

    Rng rng(26, 0);
    for (int i = 0; i < 5; ++i) {
        const std::size_t dim = 3;
        std::vector<double> mu_q(dim), var_q(dim), mu_p(dim), var_p(dim);
        for (std::size_t j = 0; j < dim; ++j) {
            mu_q[j] = -1.5 + 3.0 * rng.uniform();
            var_q[j] = 0.3 + 2.0 * rng.uniform();
            mu_p[j] = -1.5 + 3.0 * rng.uniform();
            var_p[j] = 0.3 + 2.0 * rng.uniform();
        }
        const double closed =
            kl_gaussian_pair(make(std::vector<double>(mu_q), std::vector<double>(var_q)),
                             make(std::vector<double>(mu_p), std::vector<double>(var_p)))
                .value()[0];
        const auto mc = mc_kl_diag(mu_q, var_q, mu_p, var_p, 200000, 2000 + i);
        CHECK(std::abs(closed - mc.mean) < 4.0 * mc.se + 1e-9);
        CHECK(closed >= -1e-12);
    }

    StatsVar q = make({0.4, -0.2}, {0.9, 1.1});
    StatsVar p = make({0.1, 0.3}, {1.4, 0.7});
    auto g = gradcheck([&] { return kl_gaussian_pair(q, p); }, {q.mu, q.var, p.mu, p.var});
    CAPTURE(g.worst);
    CHECK(g.max_rel_err < 1e-6);
}

TEST_CASE("cross_entropy matches a high-precision log-softmax and its gradient") {
    // Uniform logits over K classes cost ln K regardless of the label.
    {
        Var logits = Var::constant(Tensor::full({3, 4}, 0.7));
        CHECK(cross_entropy(logits, {0, 2, 3}).value()[0] ==
              doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }
    // Long-double oracle on random logits.
    Rng rng(27, 0);
    const std::size_t n = 5, K = 7;
    const Tensor logits = random_tensor({n, K}, rng, -3.0, 3.0);
    const std::vector<int> labels = {3, 0, 6, 2, 2};
    long double expect = 0.0L;
    for (std::size_t i = 0; i < n; ++i) {
        long double mx = logits.at(i, 0);
        for (std::size_t j = 1; j < K; ++j) mx = std::max<long double>(mx, logits.at(i, j));
        long double lse = 0.0L;
        for (std::size_t j = 0; j < K; ++j) lse += std::exp(static_cast<long double>(logits.at(i, j)) - mx);
        lse = mx + std::log(lse);
        expect += lse - logits.at(i, static_cast<std::size_t>(labels[i]));
    }
    expect /= n;
    Var vl = Var::param(logits);
    CHECK(cross_entropy(vl, labels).value()[0] ==
          doctest::Approx(static_cast<double>(expect)).epsilon(1e-12));

    auto g = gradcheck([&] { return cross_entropy(vl, labels); }, {vl});
    CAPTURE(g.worst);
    CHECK(g.max_rel_err < 1e-6);

    // Extreme logits stay finite on the log-sum-exp path.
    Var extreme = Var::constant(Tensor({1, 2}, {1000.0, -1000.0}));
    const double v = cross_entropy(extreme, {1}).value()[0];
    CHECK(std::isfinite(v));
    CHECK(v == doctest::Approx(2000.0).epsilon(1e-12));

    CHECK_THROWS_AS(cross_entropy(vl, {0, 1, 2, 3, 7}), contract_error);
    CHECK_THROWS_AS(cross_entropy(vl, {0, 1}), contract_error);
}

TEST_CASE("beta schedule ramps linearly and clamps") {
    CHECK(beta_schedule(0, 10) == 0.0);
    CHECK(beta_schedule(1, 10) == doctest::Approx(0.1).epsilon(1e-15));
    CHECK(beta_schedule(5, 10) == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(beta_schedule(10, 10) == 1.0);
    CHECK(beta_schedule(17, 10) == 1.0);
    CHECK(beta_schedule(3, 0) == 1.0);  // degenerate horizon: no annealing
}

namespace {

LadderConfig toy_config() {
    LadderConfig cfg;
    cfg.input_dim = 8;
    cfg.layer_dims = {6, 5};
    cfg.latent_dim = 3;
    cfg.num_classes = 3;
    return cfg;
}

}  // namespace

TEST_CASE("total_loss assembles the documented combination") {
    LadderModel model(toy_config(), 11);
    Rng rng(5, 3);
    const Tensor x = random_tensor({4, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels = {0, 2, 1, 1};
    Rng fwd(9, 1);
    const ForwardTrace trace = model.forward(Var::constant(x), PassMode::train, &fwd);
    const LossResult r = total_loss(model, trace, x, labels, 0.37, 100.0);

    CHECK(r.parts.beta == 0.37);
    CHECK(r.parts.lambda == 100.0);
    CHECK(r.parts.recon_weight == 1.0);
    REQUIRE(r.parts.kl_layers.size() == 1);  // one middle rung
    const double reassembled =
        r.parts.recon +
        0.37 * (r.parts.kl_latent + r.parts.kl_layers_sum()) /
            (1.0 + static_cast<double>(r.parts.kl_layers.size())) +
        100.0 * r.parts.ce;
    CHECK(r.total.value()[0] == doctest::Approx(reassembled).epsilon(1e-12));
    CHECK(r.total.value()[0] == doctest::Approx(r.parts.total).epsilon(1e-12));
    CHECK(r.parts.recon > 0.0);
    CHECK(r.parts.kl_latent >= 0.0);
    CHECK(r.parts.ce > 0.0);
}

TEST_CASE("classifier-only traces require a zero reconstruction weight") {
    LadderModel model(toy_config(), 11);
    Rng rng(5, 3);
    const Tensor x = random_tensor({4, 8}, rng, 0.0, 1.0);
    const std::vector<int> labels = {0, 2, 1, 1};
    Rng fwd(9, 1);
    const ForwardTrace trace = model.forward(Var::constant(x), PassMode::train, &fwd, false);
    CHECK_THROWS_AS(total_loss(model, trace, x, labels, 0.0, 100.0, 1.0), contract_error);
    const LossResult r = total_loss(model, trace, x, labels, 0.0, 100.0, 0.0);
    CHECK(r.parts.recon == 0.0);
    CHECK(r.parts.kl_layers.empty());
    CHECK(r.total.value()[0] == doctest::Approx(100.0 * r.parts.ce).epsilon(1e-12));
}

TEST_CASE("every model parameter gradient of the total loss matches finite differences") {
    // Miniature end-to-end differentiation check; the acceptance suite runs
    // the full-size version.
    LadderConfig cfg;
    cfg.input_dim = 6;
    cfg.layer_dims = {5, 4};
    cfg.latent_dim = 2;
    cfg.num_classes = 2;
    LadderModel model(cfg, 3);
    Rng rng(5, 3);
    const Tensor x = random_tensor({3, 6}, rng, 0.0, 1.0);
    const std::vector<int> labels = {0, 1, 1};

    auto loss_fn = [&] {
        Rng fwd(1234, 5);  // same eps draws on every evaluation
        const ForwardTrace t = model.forward(Var::constant(x), PassMode::train, &fwd);
        return total_loss(model, t, x, labels, 0.8, 10.0).total;
    };
    auto g = gradcheck(loss_fn, model.parameters(), 1e-5, 1e-3);
    CAPTURE(g.worst);
    CHECK(g.compared > 100);
    CHECK(g.max_rel_err < 1e-4);
}
