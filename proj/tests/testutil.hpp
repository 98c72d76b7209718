#pragma once

// Shared oracles for the test suite. Everything here is computed by a
// different method than the library uses, so agreement is evidence rather
// than tautology: gradients come from central finite differences, KL values
// from Monte-Carlo estimation, membership probabilities from composite
// Simpson quadrature of the Gaussian density.

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "cgdl/autodiff.hpp"
#include "cgdl/rng.hpp"
#include "cgdl/tensor.hpp"

namespace testutil {

// --- finite-difference gradient check ---------------------------------------

struct GradCheck {
    double max_rel_err = 0.0;
    std::string worst;  // which element disagreed most
    std::size_t compared = 0;
};

// rel_err = |fd - ad| / max(|fd|, |ad|, floor). The floor keeps noise in
// near-zero gradients from registering as relative blow-ups.
inline double rel_err(double a, double b, double floor) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Evaluates d loss / d p for every element of every parameter by central
// differences (loss(p+h) - loss(p-h)) / 2h and compares against the adjoints
// recorded by one backward pass. loss_fn must rebuild the graph from the
// parameters' current values on every call.
inline GradCheck gradcheck(const std::function<cgdl::Var()>& loss_fn,
                           std::vector<cgdl::Var> params, double h = 1e-5,
                           double floor = 1e-3) {
    for (auto& p : params) p.zero_grad();
    cgdl::Var loss = loss_fn();
    cgdl::backward(loss);
    std::vector<cgdl::Tensor> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(p.grad());

    GradCheck result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        cgdl::Tensor& value = params[pi].mutable_value();
        for (std::size_t i = 0; i < value.size(); ++i) {
            const double original = value[i];
            double f_plus = 0.0, f_minus = 0.0;
            {
                cgdl::NoGradGuard guard;
                value[i] = original + h;
                f_plus = loss_fn().value()[0];
                value[i] = original - h;
                f_minus = loss_fn().value()[0];
            }
            value[i] = original;
            const double fd = (f_plus - f_minus) / (2.0 * h);
            const double ad = grads[pi][i];
            const double err = rel_err(fd, ad, floor);
            ++result.compared;
            if (err > result.max_rel_err) {
                result.max_rel_err = err;
                result.worst = "param " + std::to_string(pi) + "[" + std::to_string(i) +
                               "]: fd=" + std::to_string(fd) + " ad=" + std::to_string(ad);
            }
        }
    }
    return result;
}

// --- Monte-Carlo KL oracle ----------------------------------------------------

struct McEstimate {
    double mean = 0.0;
    double se = 0.0;  // standard error of the mean
};

// KL(q || p) for diagonal Gaussians, estimated as the sample mean of
// log q(z) - log p(z) over z ~ q. Works per batch row summed over dims.
inline McEstimate mc_kl_diag(const std::vector<double>& mu_q, const std::vector<double>& var_q,
                             const std::vector<double>& mu_p, const std::vector<double>& var_p,
                             std::size_t samples, std::uint64_t seed) {
    cgdl::Rng rng(seed, /*stream=*/99);
    const std::size_t dim = mu_q.size();
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < samples; ++s) {
        double log_ratio = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
            const double z = mu_q[j] + std::sqrt(var_q[j]) * rng.normal();
            const double dq = z - mu_q[j];
            const double dp = z - mu_p[j];
            log_ratio += 0.5 * (std::log(var_p[j] / var_q[j]) + dp * dp / var_p[j] -
                                dq * dq / var_q[j]);
        }
        sum += log_ratio;
        sum_sq += log_ratio * log_ratio;
    }
    McEstimate e;
    const double n = static_cast<double>(samples);
    e.mean = sum / n;
    const double var = std::max(0.0, sum_sq / n - e.mean * e.mean);
    e.se = std::sqrt(var / n);
    return e;
}

// --- quadrature membership oracle ----------------------------------------------

// Composite Simpson integral of f over [a, b] with n (even) panels.
inline double simpson(const std::function<double(double)>& f, double a, double b,
                      std::size_t n_panels) {
    if (n_panels % 2 != 0) ++n_panels;
    const double h = (b - a) / static_cast<double>(n_panels);
    double acc = f(a) + f(b);
    for (std::size_t i = 1; i < n_panels; ++i)
        acc += f(a + h * static_cast<double>(i)) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

// Membership probability computed without erf: per axis, integrate the
// Gaussian density over the symmetric interval around the mean through z,
// multiply the axis masses, and subtract from one.
inline double membership_quadrature(const std::vector<double>& z, const std::vector<double>& mean,
                                    const std::vector<double>& var, std::size_t panels = 4000) {
    double inside = 1.0;
    for (std::size_t j = 0; j < z.size(); ++j) {
        const double d = std::abs(z[j] - mean[j]);
        const double sigma = std::sqrt(var[j]);
        const double norm = 1.0 / (sigma * std::sqrt(2.0 * 3.14159265358979323846));
        auto pdf = [&](double x) {
            const double u = (x - mean[j]) / sigma;
            return norm * std::exp(-0.5 * u * u);
        };
        inside *= simpson(pdf, mean[j] - d, mean[j] + d, panels);
    }
    return 1.0 - inside;
}

// --- misc helpers ---------------------------------------------------------------

inline cgdl::Tensor random_tensor(std::vector<std::size_t> shape, cgdl::Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
    cgdl::Tensor t(std::move(shape));
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = lo + (hi - lo) * rng.uniform();
    return t;
}

inline cgdl::Tensor random_positive(std::vector<std::size_t> shape, cgdl::Rng& rng,
                                    double lo = 0.1, double hi = 2.0) {
    return random_tensor(std::move(shape), rng, lo, hi);
}

}  // namespace testutil
