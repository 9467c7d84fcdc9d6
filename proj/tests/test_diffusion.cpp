#include <doctest.h>

#include <cmath>
#include <random>

#include "dlfkit/diffusion.hpp"

using namespace dlfkit;

namespace {

std::mt19937_64 rng(29);

Eigen::MatrixXd randmat(int n, int d) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

AffineMap random_map(int dim) {
    std::uniform_real_distribution<double> ua(-3.0, 3.0);
    std::uniform_real_distribution<double> us(0.2, 3.0);
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> angles;
    for (int i = 0; i + 1 < dim; i += 2) {
        pairs.push_back({i, i + 1});
        angles.push_back(ua(rng));
    }
    Eigen::VectorXd t = randmat(dim, 1).col(0);
    return AffineMap(AffineMap::givens(pairs, angles, dim).rotation(), us(rng), t);
}

}  // namespace

TEST_CASE("noise families have the advertised moments") {
    const int n = 1000000;

    Eigen::MatrixXd g = draw_noise(NoiseKind::gaussian(), rng, n, 1);
    CHECK(std::abs(g.mean()) < 4.0 / std::sqrt(double(n)));
    double gv = (g.array() - g.mean()).square().sum() / (n - 1);
    CHECK(gv == doctest::Approx(1.0).epsilon(0.01));

    Eigen::MatrixXd u = draw_noise(NoiseKind::uniform(), rng, n, 1);
    CHECK(std::abs(u.mean()) < 4.0 / std::sqrt(double(n)));
    double uv = (u.array() - u.mean()).square().sum() / (n - 1);
    CHECK(uv == doctest::Approx(1.0).epsilon(0.01));
    CHECK(u.maxCoeff() <= std::sqrt(3.0));
    CHECK(u.minCoeff() >= -std::sqrt(3.0));

    Eigen::MatrixXd p = draw_noise(NoiseKind::centered_poisson(4.0), rng, n, 1);
    CHECK(std::abs(p.mean()) < 4.0 * 2.0 / std::sqrt(double(n)));
    double pv = (p.array() - p.mean()).square().sum() / (n - 1);
    CHECK(pv == doctest::Approx(4.0).epsilon(0.02));

    Eigen::MatrixXd m0 = draw_noise(NoiseKind::mask(0.0), rng, 100, 3);
    CHECK(m0.cwiseAbs().maxCoeff() == 0.0);
    Eigen::MatrixXd m = draw_noise(NoiseKind::mask(0.4), rng, 10000, 1);
    for (int i = 0; i < m.size(); ++i)
        CHECK((m.data()[i] == 0.0 || m.data()[i] == -1.0));
    CHECK(m.mean() == doctest::Approx(-0.4).epsilon(0.1));

    CHECK_THROWS_AS(NoiseKind::centered_poisson(0.0), std::invalid_argument);
    CHECK_THROWS_AS(NoiseKind::mask(1.5), std::invalid_argument);
}

TEST_CASE("noise_forward formula and limits") {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    Eigen::MatrixXd x0 = randmat(3, 4), eps = randmat(3, 4);

    Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 4);
    CHECK((noise_forward(s, 7, x0, zero) - s.sqrt_alpha_bar(7) * x0)
              .cwiseAbs()
              .maxCoeff() == 0.0);
    CHECK((noise_forward(s, 7, zero, eps) -
           s.sqrt_one_minus_alpha_bar(7) * eps)
              .cwiseAbs()
              .maxCoeff() == 0.0);

    // Scalar spot value at the deep-noise end of the default schedule.
    Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
    double v = noise_forward(s, 1000, one, one)(0, 0);
    CHECK(v == doctest::Approx(1.0063).epsilon(2e-4));

    CHECK_THROWS_AS(noise_forward(s, 0, x0, eps), std::out_of_range);
    CHECK_THROWS_AS(noise_forward(s, 1, x0, randmat(2, 4)),
                    std::invalid_argument);
}

TEST_CASE("noise_forward_affine reductions") {
    Schedule s = Schedule::linear(100, 1e-3, 2e-2);
    Eigen::MatrixXd x0 = randmat(4, 6), eps = randmat(4, 6);

    AffineMap id = AffineMap::identity(6);
    NoisePair p = noise_forward_affine(s, 42, x0, eps, id, id);
    CHECK((p.noisy - noise_forward(s, 42, x0, eps)).cwiseAbs().maxCoeff() <
          1e-15);
    CHECK((p.target - eps).cwiseAbs().maxCoeff() == 0.0);

    AffineMap sc = AffineMap::scaling(0.6, 6);
    NoisePair ps = noise_forward_affine(s, 42, x0, eps, sc, sc);
    CHECK((ps.noisy - 0.6 * noise_forward(s, 42, x0, eps)).cwiseAbs().maxCoeff() <
          1e-14);

    // Term-by-term recomputation with independent maps.
    AffineMap g = random_map(6), h = random_map(6);
    NoisePair pr = noise_forward_affine(s, 10, x0, eps, g, h);
    Eigen::MatrixXd expect = s.sqrt_alpha_bar(10) * g.apply_rows(x0) +
                             s.sqrt_one_minus_alpha_bar(10) * h.apply_rows(eps);
    CHECK((pr.noisy - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ancestral step: determinism at t=1 and exact posterior mean") {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    Eigen::MatrixXd x1 = randmat(3, 2), eh = randmat(3, 2);

    std::mt19937_64 a(1), b(2);
    CHECK((ancestral_step(s, 1, x1, eh, a) - ancestral_step(s, 1, x1, eh, b))
              .cwiseAbs()
              .maxCoeff() == 0.0);

    // With the exact eps and sigma_1 = 0 conventions removed (t > 1), check
    // the deterministic part against the posterior-mean formula by zeroing
    // the variance via two identical rng streams is not possible; instead
    // evaluate at t = 1 where the step is deterministic, plus compare the
    // formula directly at t = 500 by recomputing the mean term.
    int t = 500;
    Eigen::MatrixXd x0 = randmat(3, 2), eps = randmat(3, 2);
    Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
    Eigen::MatrixXd mean =
        (x_t - ((1.0 - s.alpha(t)) / s.sqrt_one_minus_alpha_bar(t)) * eps) /
        std::sqrt(s.alpha(t));
    Eigen::MatrixXd mu_tilde =
        (s.sqrt_alpha_bar(t - 1) * s.beta(t) * x0 +
         std::sqrt(s.alpha(t)) * (1.0 - s.alpha_bar(t - 1)) * x_t) /
        (1.0 - s.alpha_bar(t));
    CHECK((mean - mu_tilde).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample_fit_step exact-eps round trip") {
    Schedule s = Schedule::linear(500, 2e-4, 1.5e-2);
    for (int it = 0; it < 1000; ++it) {
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd x0 = randmat(2, 5), eps = randmat(2, 5),
                        eps2 = randmat(2, 5);
        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
        Eigen::MatrixXd got = sample_fit_step(s, t, x_t, eps, eps2);
        Eigen::MatrixXd expect = s.sqrt_alpha_bar(t - 1) * x0 +
                                 std::sqrt(1.0 - s.alpha_bar(t - 1)) * eps2;
        CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-10);
    }

    // t = 1 with the exact eps recovers x0 exactly (alpha_bar(0) = 1).
    Eigen::MatrixXd x0 = randmat(3, 3), eps = randmat(3, 3);
    Eigen::MatrixXd x1 = noise_forward(s, 1, x0, eps);
    Eigen::MatrixXd rec =
        sample_fit_step(s, 1, x1, eps, Eigen::MatrixXd::Zero(3, 3));
    CHECK((rec - x0).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sample_fit_step negative control: sign flip breaks the round trip") {
    Schedule s = Schedule::linear(500, 2e-4, 1.5e-2);
    auto mutated = [&](int t, const Eigen::MatrixXd& x_t,
                       const Eigen::MatrixXd& eps_hat,
                       const Eigen::MatrixXd& eps_new) {
        Eigen::MatrixXd x0_hat =
            (x_t + s.sqrt_one_minus_alpha_bar(t) * eps_hat) /
            s.sqrt_alpha_bar(t);  // wrong sign
        return s.sqrt_alpha_bar(t - 1) * x0_hat +
               std::sqrt(1.0 - s.alpha_bar(t - 1)) * eps_new;
    };
    double worst = 0.0;
    for (int it = 0; it < 50; ++it) {
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd x0 = randmat(2, 4), eps = randmat(2, 4),
                        eps2 = randmat(2, 4);
        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
        Eigen::MatrixXd expect = s.sqrt_alpha_bar(t - 1) * x0 +
                                 std::sqrt(1.0 - s.alpha_bar(t - 1)) * eps2;
        worst = std::max(worst, (mutated(t, x_t, eps, eps2) - expect)
                                    .cwiseAbs()
                                    .maxCoeff());
    }
    CHECK(worst > 1e-3);
}

TEST_CASE("sample_fit_step_affine reduces and round-trips") {
    Schedule s = Schedule::linear(300, 1e-4, 2e-2);
    AffineMap id = AffineMap::identity(4);

    for (int it = 0; it < 500; ++it) {
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd x0 = randmat(2, 4), eps = randmat(2, 4),
                        eps2 = randmat(2, 4);

        Eigen::MatrixXd plain = sample_fit_step(
            s, t, noise_forward(s, t, x0, eps), eps, eps2);
        Eigen::MatrixXd via_affine = sample_fit_step_affine(
            s, t, noise_forward(s, t, x0, eps), eps, eps2, id, id, id, id);
        CHECK((plain - via_affine).cwiseAbs().maxCoeff() < 1e-12);

        AffineMap g_t = random_map(4), g_prev = random_map(4);
        AffineMap h_t = random_map(4), h_prev = random_map(4);
        NoisePair pair = noise_forward_affine(s, t, x0, eps, g_t, h_t);
        Eigen::MatrixXd got = sample_fit_step_affine(s, t, pair.noisy, eps, eps2,
                                                     g_t, g_prev, h_t, h_prev);
        NoisePair prev = noise_forward_affine(s, t == 1 ? 1 : t - 1, x0, eps2,
                                              g_prev, h_prev);
        Eigen::MatrixXd expect =
            s.sqrt_alpha_bar(t - 1) * g_prev.apply_rows(x0) +
            std::sqrt(1.0 - s.alpha_bar(t - 1)) * h_prev.apply_rows(eps2);
        CHECK((got - expect).cwiseAbs().maxCoeff() < 1e-10);
        if (t > 1)
            CHECK((prev.noisy - expect).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("eps_to_score matches the analytic Gaussian marginal score") {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    double mu0 = 1.0, s0 = 0.5;
    for (int t : {100, 500, 900}) {
        double ab = s.alpha_bar(t);
        double var = ab * s0 * s0 + 1.0 - ab;
        for (double x = -1.0; x <= 3.0; x += 0.25) {
            Eigen::MatrixXd xm = Eigen::MatrixXd::Constant(1, 1, x);
            Eigen::MatrixXd eps_opt =
                std::sqrt(1.0 - ab) * (xm.array() - std::sqrt(ab) * mu0) / var;
            double score = eps_to_score(s, t, eps_opt)(0, 0);
            double analytic = -(x - std::sqrt(ab) * mu0) / var;
            CHECK(std::abs(score - analytic) < 1e-8);
        }
    }
    CHECK(eps_to_score(s, 3, Eigen::MatrixXd::Zero(2, 2)).cwiseAbs().maxCoeff() ==
          0.0);
}
