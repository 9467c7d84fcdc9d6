#include "dlfkit/ncm.hpp"

#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

namespace {

nlohmann::json noise_kind_to_json(const NoiseKind& k) {
    nlohmann::json j;
    switch (k.variant) {
        case NoiseKind::Variant::gaussian: j["variant"] = "gaussian"; break;
        case NoiseKind::Variant::uniform: j["variant"] = "uniform"; break;
        case NoiseKind::Variant::centered_poisson:
            j["variant"] = "centered_poisson";
            j["rate"] = k.rate;
            break;
        case NoiseKind::Variant::mask:
            j["variant"] = "mask";
            j["prob"] = k.prob;
            break;
    }
    return j;
}

NoiseKind noise_kind_from_json(const nlohmann::json& j) {
    std::string v = j.at("variant").get<std::string>();
    if (v == "gaussian") return NoiseKind::gaussian();
    if (v == "uniform") return NoiseKind::uniform();
    if (v == "centered_poisson") return NoiseKind::centered_poisson(j.at("rate").get<double>());
    if (v == "mask") return NoiseKind::mask(j.at("prob").get<double>());
    throw std::invalid_argument("unknown noise kind '" + v + "'");
}

std::vector<std::pair<int, int>> default_givens_pairs(int dim) {
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i + 1 < dim; i += 2) pairs.emplace_back(i, i + 1);
    return pairs;
}

}  // namespace

void NcmConfig::validate() const {
    if (out_dim < 1) throw std::invalid_argument("NcmConfig: out_dim must be >= 1");
    for (auto& r : ramps) {
        if (r.param_min > r.param_max)
            throw std::invalid_argument("NcmConfig: ramp min > max");
        if (r.kind == PerturbKind::rotation) {
            if (out_dim % 2 != 0)
                throw std::invalid_argument(
                    "NcmConfig: rotation ramps require an even out_dim");
            for (auto& [i, j] : r.dim_pairs)
                if (i >= out_dim || j >= out_dim)
                    throw std::invalid_argument("NcmConfig: Givens pair outside out_dim");
        }
        if (r.kind == PerturbKind::scaling && !(r.param_min > 0.0))
            throw std::invalid_argument("NcmConfig: scaling ramp requires min > 0");
    }
}

std::string NcmConfig::to_json() const {
    nlohmann::json j;
    j["out_dim"] = out_dim;
    j["ramps"] = nlohmann::json::array();
    for (auto& r : ramps) j["ramps"].push_back(nlohmann::json::parse(r.to_json()));
    j["noise_kind"] = noise_kind_to_json(noise_kind);
    j["mix_policy"] = mix_policy == MixPolicy::compose_all ? "compose_all"
                                                           : "single_random_per_batch";
    return j.dump();
}

NcmConfig NcmConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    NcmConfig cfg;
    cfg.out_dim = j.value("out_dim", 8);
    for (auto& rj : j.value("ramps", nlohmann::json::array()))
        cfg.ramps.push_back(PerturbRamp::from_json(rj.dump()));
    if (j.contains("noise_kind")) cfg.noise_kind = noise_kind_from_json(j["noise_kind"]);
    std::string mp = j.value("mix_policy", "single_random_per_batch");
    if (mp == "compose_all")
        cfg.mix_policy = MixPolicy::compose_all;
    else if (mp == "single_random_per_batch")
        cfg.mix_policy = MixPolicy::single_random_per_batch;
    else
        throw std::invalid_argument("NcmConfig: unknown mix_policy '" + mp + "'");
    cfg.validate();
    return cfg;
}

NcmConfig NcmConfig::preset(const std::string& name) {
    NcmConfig cfg;
    cfg.out_dim = 8;
    auto pairs = default_givens_pairs(cfg.out_dim);
    if (name == "2d") {
        cfg.ramps = {
            {PerturbKind::translation, -5.0, 0.0, {}},
            {PerturbKind::scaling, 0.01, 1.0, {}},
            {PerturbKind::rotation, -3.1415, 0.0, pairs},
        };
    } else if (name == "3d") {
        cfg.ramps = {
            {PerturbKind::translation, 0.0, 5.0, {}},
            {PerturbKind::scaling, 1.0, 2.0, {}},
            {PerturbKind::rotation, 0.0, 3.1415, pairs},
        };
    } else {
        throw std::invalid_argument("NcmConfig: unknown preset '" + name + "'");
    }
    cfg.validate();
    return cfg;
}

Eigen::MatrixXd project_latent(const Eigen::MatrixXd& x, const DenseNet& proj,
                               Tape* tape) {
    if (proj.layer_count() != 3)
        throw std::invalid_argument("project_latent: projection must have 3 layers");
    return proj.forward(x, {}, nullptr, tape);
}

AffineMap ncm_map_at(const NcmConfig& cfg, int t, int T, std::mt19937_64& rng) {
    // Ramps at the t -> 0 limit collapse to the identity only when their
    // parameter ranges start at the neutral element; callers relying on the
    // identity reduction use empty ramp lists instead.
    if (cfg.ramps.empty()) return AffineMap::identity(cfg.out_dim);
    if (cfg.mix_policy == MixPolicy::single_random_per_batch) {
        std::uniform_int_distribution<size_t> pick(0, cfg.ramps.size() - 1);
        return cfg.ramps[pick(rng)].at(t, T, cfg.out_dim);
    }
    AffineMap map = cfg.ramps.front().at(t, T, cfg.out_dim);
    for (size_t i = 1; i < cfg.ramps.size(); ++i)
        map = AffineMap::compose(cfg.ramps[i].at(t, T, cfg.out_dim), map);
    return map;
}

NoisePair construct_pair(const Eigen::MatrixXd& latent, int t, const Schedule& s,
                         const NcmConfig& cfg, std::mt19937_64& rng) {
    if (latent.cols() != cfg.out_dim)
        throw std::invalid_argument("construct_pair: latent width != out_dim");
    AffineMap map = ncm_map_at(cfg, t, s.T(), rng);
    Eigen::MatrixXd eps = draw_noise(cfg.noise_kind, rng, latent.rows(), latent.cols());
    return noise_forward_affine(s, t, latent, eps, map, map);
}

}  // namespace dlfkit
