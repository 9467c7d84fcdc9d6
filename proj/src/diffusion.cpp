#include "dlfkit/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace dlfkit {

NoiseKind NoiseKind::centered_poisson(double rate) {
    if (!(rate > 0.0)) throw std::invalid_argument("centered_poisson: rate must be > 0");
    return {Variant::centered_poisson, rate, 0.0};
}

NoiseKind NoiseKind::mask(double prob) {
    if (prob < 0.0 || prob > 1.0) throw std::invalid_argument("mask: prob outside [0,1]");
    return {Variant::mask, 1.0, prob};
}

Eigen::MatrixXd draw_noise(const NoiseKind& kind, std::mt19937_64& rng,
                           Eigen::Index n, Eigen::Index d) {
    if (n < 0 || d < 0) throw std::invalid_argument("draw_noise: invalid shape");
    Eigen::MatrixXd out(n, d);
    switch (kind.variant) {
        case NoiseKind::Variant::gaussian: {
            std::normal_distribution<double> dist(0.0, 1.0);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < d; ++j) out(i, j) = dist(rng);
            break;
        }
        case NoiseKind::Variant::uniform: {
            // Zero mean, unit variance: U(-sqrt(3), sqrt(3)).
            std::uniform_real_distribution<double> dist(-std::sqrt(3.0), std::sqrt(3.0));
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < d; ++j) out(i, j) = dist(rng);
            break;
        }
        case NoiseKind::Variant::centered_poisson: {
            std::poisson_distribution<long> dist(kind.rate);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < d; ++j)
                    out(i, j) = static_cast<double>(dist(rng)) - kind.rate;
            break;
        }
        case NoiseKind::Variant::mask: {
            std::bernoulli_distribution dist(kind.prob);
            for (Eigen::Index i = 0; i < n; ++i)
                for (Eigen::Index j = 0; j < d; ++j) out(i, j) = dist(rng) ? -1.0 : 0.0;
            break;
        }
    }
    return out;
}

Eigen::MatrixXd noise_forward(const Schedule& s, int t, const Eigen::MatrixXd& x0,
                              const Eigen::MatrixXd& eps) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
        throw std::invalid_argument("noise_forward: shape mismatch");
    if (t < 1 || t > s.T())
        throw std::out_of_range("noise_forward: timestep outside [1,T]");
    return s.sqrt_alpha_bar(t) * x0 + s.sqrt_one_minus_alpha_bar(t) * eps;
}

NoisePair noise_forward_affine(const Schedule& s, int t, const Eigen::MatrixXd& x0,
                               const Eigen::MatrixXd& eps, const AffineMap& g,
                               const AffineMap& h) {
    if (x0.cols() != g.dim() || eps.cols() != h.dim())
        throw std::invalid_argument("noise_forward_affine: dimension mismatch");
    NoisePair pair;
    pair.t = t;
    pair.g_map = g;
    pair.h_map = h;
    pair.target = h.apply_rows(eps);
    pair.noisy = s.sqrt_alpha_bar(t) * g.apply_rows(x0) +
                 s.sqrt_one_minus_alpha_bar(t) * pair.target;
    return pair;
}

Eigen::MatrixXd ancestral_step(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                               const Eigen::MatrixXd& eps_hat, std::mt19937_64& rng) {
    double a_t = s.alpha(t);
    Eigen::MatrixXd mean =
        (x_t - ((1.0 - a_t) / s.sqrt_one_minus_alpha_bar(t)) * eps_hat) / std::sqrt(a_t);
    double sigma = std::sqrt(s.posterior_var(t));
    if (sigma == 0.0) return mean;
    return mean + sigma * draw_noise(NoiseKind::gaussian(), rng, x_t.rows(), x_t.cols());
}

Eigen::MatrixXd sample_fit_step(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                                const Eigen::MatrixXd& eps_hat,
                                const Eigen::MatrixXd& eps_new) {
    double ab_prev = s.alpha_bar(t - 1);
    Eigen::MatrixXd x0_hat =
        (x_t - s.sqrt_one_minus_alpha_bar(t) * eps_hat) / s.sqrt_alpha_bar(t);
    return std::sqrt(ab_prev) * x0_hat + std::sqrt(1.0 - ab_prev) * eps_new;
}

Eigen::MatrixXd sample_fit_step_affine(const Schedule& s, int t,
                                       const Eigen::MatrixXd& x_t_tf,
                                       const Eigen::MatrixXd& eps_hat,
                                       const Eigen::MatrixXd& eps_new,
                                       const AffineMap& g_t, const AffineMap& g_prev,
                                       const AffineMap& h_t, const AffineMap& h_prev) {
    if (x_t_tf.cols() != g_t.dim())
        throw std::invalid_argument("sample_fit_step_affine: dimension mismatch");
    double ab_prev = s.alpha_bar(t - 1);
    Eigen::MatrixXd x0_hat = g_t.inverse().apply_rows(
        (x_t_tf - s.sqrt_one_minus_alpha_bar(t) * h_t.apply_rows(eps_hat)) /
        s.sqrt_alpha_bar(t));
    return std::sqrt(ab_prev) * g_prev.apply_rows(x0_hat) +
           std::sqrt(1.0 - ab_prev) * h_prev.apply_rows(eps_new);
}

Eigen::MatrixXd eps_to_score(const Schedule& s, int t, const Eigen::MatrixXd& eps_hat) {
    return -eps_hat / s.sqrt_one_minus_alpha_bar(t);
}

}  // namespace dlfkit
