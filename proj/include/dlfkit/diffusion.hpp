#pragma once

#include <random>
#include <variant>

#include <Eigen/Dense>

#include "dlfkit/affine.hpp"
#include "dlfkit/schedule.hpp"

namespace dlfkit {

/// Zero-mean noise families for the sample-fitting rule. The mask variant
/// produces a {0,-1}-valued pattern; it approximates deterministic
/// degradations and is only valid under the sample-fitting sampler.
struct NoiseKind {
    enum class Variant { gaussian, uniform, centered_poisson, mask };
    Variant variant = Variant::gaussian;
    double rate = 1.0;  // centered_poisson
    double prob = 0.0;  // mask

    static NoiseKind gaussian() { return {Variant::gaussian, 1.0, 0.0}; }
    static NoiseKind uniform() { return {Variant::uniform, 1.0, 0.0}; }
    static NoiseKind centered_poisson(double rate);
    static NoiseKind mask(double prob);
};

/// One constructed training sample under the affine noising formula.
struct NoisePair {
    Eigen::MatrixXd noisy;   // f_t*(x_t)
    Eigen::MatrixXd target;  // h_t*(eps)
    int t = 0;
    AffineMap g_map;
    AffineMap h_map;
};

Eigen::MatrixXd draw_noise(const NoiseKind& kind, std::mt19937_64& rng,
                           Eigen::Index n, Eigen::Index d);

/// x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps
Eigen::MatrixXd noise_forward(const Schedule& s, int t, const Eigen::MatrixXd& x0,
                              const Eigen::MatrixXd& eps);

/// Affine-transformed forward: noisy = sqrt(ab_t) g(x0) + sqrt(1-ab_t) h(eps),
/// target = h(eps).
NoisePair noise_forward_affine(const Schedule& s, int t, const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& eps, const AffineMap& g,
                               const AffineMap& h);

/// Posterior-mean ancestral step with sigma_t * z added noise (z ~ N(0,I));
/// sigma_1 = 0 so the final step is deterministic.
Eigen::MatrixXd ancestral_step(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                               const Eigen::MatrixXd& eps_hat, std::mt19937_64& rng);

/// Sample-fitting reverse step built from q(x_{t-1}|x0):
/// x_{t-1} = sqrt(ab_{t-1})/sqrt(ab_t) (x_t - sqrt(1-ab_t) eps_hat)
///           + sqrt(1-ab_{t-1}) eps_new.
/// eps_new is injected explicitly so tests can force deterministic round-trips.
Eigen::MatrixXd sample_fit_step(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                                const Eigen::MatrixXd& eps_hat,
                                const Eigen::MatrixXd& eps_new);

/// Affine sample-fitting step (the transformed ground-truth denoising rule).
Eigen::MatrixXd sample_fit_step_affine(const Schedule& s, int t,
                                       const Eigen::MatrixXd& x_t_tf,
                                       const Eigen::MatrixXd& eps_hat,
                                       const Eigen::MatrixXd& eps_new,
                                       const AffineMap& g_t, const AffineMap& g_prev,
                                       const AffineMap& h_t, const AffineMap& h_prev);

/// score = -eps_hat / sqrt(1 - ab_t)
Eigen::MatrixXd eps_to_score(const Schedule& s, int t, const Eigen::MatrixXd& eps_hat);

}  // namespace dlfkit
