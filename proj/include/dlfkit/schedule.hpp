#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlfkit {

/// Diffusion variance schedule. Timesteps are 1-indexed, t in {1,...,T},
/// with a virtual alpha_bar(0) = 1 so the t=1 posterior variance is zero.
/// All derived arrays are precomputed at construction and never mutated.
class Schedule {
public:
    static Schedule linear(int T, double beta_start, double beta_end);

    int T() const { return static_cast<int>(betas_.size()); }

    double beta(int t) const { return betas_[check(t) - 1]; }
    double alpha(int t) const { return alphas_[check(t) - 1]; }
    double alpha_bar(int t) const {
        if (t == 0) return 1.0;  // virtual boundary
        return alpha_bars_[check(t) - 1];
    }
    double posterior_var(int t) const { return posterior_vars_[check(t) - 1]; }
    double sqrt_alpha_bar(int t) const {
        if (t == 0) return 1.0;  // virtual boundary
        return sqrt_alpha_bars_[check(t) - 1];
    }
    double sqrt_one_minus_alpha_bar(int t) const {
        if (t == 0) return 0.0;  // virtual boundary
        return sqrt_1m_alpha_bars_[check(t) - 1];
    }

    const std::vector<double>& betas() const { return betas_; }
    const std::vector<double>& alphas() const { return alphas_; }
    const std::vector<double>& alpha_bars() const { return alpha_bars_; }
    const std::vector<double>& posterior_vars() const { return posterior_vars_; }

    double beta_start() const { return beta_start_; }
    double beta_end() const { return beta_end_; }

    std::string to_json() const;
    static Schedule from_json(const std::string& text);

private:
    Schedule() = default;
    int check(int t) const {
        if (t < 1 || t > T())
            throw std::out_of_range("Schedule: timestep " + std::to_string(t) +
                                    " outside [1," + std::to_string(T()) + "]");
        return t;
    }

    std::vector<double> betas_, alphas_, alpha_bars_, posterior_vars_;
    std::vector<double> sqrt_alpha_bars_, sqrt_1m_alpha_bars_;
    double beta_start_ = 0.0, beta_end_ = 0.0;
};

/// Uniform draw from {1,...,T}.
int sample_timestep(std::mt19937_64& rng, int T);

}  // namespace dlfkit
