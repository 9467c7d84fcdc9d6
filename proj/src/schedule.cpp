#include "dlfkit/schedule.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

namespace dlfkit {

Schedule Schedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("Schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw std::invalid_argument("Schedule: need 0 < beta_start <= beta_end < 1");

    Schedule s;
    s.beta_start_ = beta_start;
    s.beta_end_ = beta_end;
    s.betas_.resize(T);
    s.alphas_.resize(T);
    s.alpha_bars_.resize(T);
    s.posterior_vars_.resize(T);
    s.sqrt_alpha_bars_.resize(T);
    s.sqrt_1m_alpha_bars_.resize(T);

    double running = 1.0;
    for (int i = 0; i < T; ++i) {
        double b = (T == 1) ? beta_start
                            : beta_start + i * (beta_end - beta_start) / (T - 1);
        s.betas_[i] = b;
        s.alphas_[i] = 1.0 - b;
        running *= s.alphas_[i];
        s.alpha_bars_[i] = running;
        double prev_bar = (i == 0) ? 1.0 : s.alpha_bars_[i - 1];
        s.posterior_vars_[i] = (1.0 - prev_bar) / (1.0 - s.alpha_bars_[i]) * b;
        s.sqrt_alpha_bars_[i] = std::sqrt(s.alpha_bars_[i]);
        s.sqrt_1m_alpha_bars_[i] = std::sqrt(1.0 - s.alpha_bars_[i]);
    }
    return s;
}

std::string Schedule::to_json() const {
    nlohmann::json j;
    j["T"] = T();
    j["beta_start"] = beta_start_;
    j["beta_end"] = beta_end_;
    j["kind"] = "linear";
    return j.dump();
}

Schedule Schedule::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    if (j.at("kind").get<std::string>() != "linear")
        throw std::invalid_argument("Schedule: unsupported kind '" +
                                    j["kind"].get<std::string>() + "'");
    return linear(j.at("T").get<int>(), j.at("beta_start").get<double>(),
                  j.at("beta_end").get<double>());
}

int sample_timestep(std::mt19937_64& rng, int T) {
    if (T < 1) throw std::invalid_argument("sample_timestep: T must be >= 1");
    std::uniform_int_distribution<int> dist(1, T);
    return dist(rng);
}

}  // namespace dlfkit
