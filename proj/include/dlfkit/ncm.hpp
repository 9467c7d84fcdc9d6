#pragma once

#include <random>
#include <string>
#include <vector>

#include "dlfkit/diffusion.hpp"
#include "dlfkit/netcore.hpp"

namespace dlfkit {

enum class MixPolicy { single_random_per_batch, compose_all };

/// Noise Construction Module configuration. The composite perturbation
/// applies identically to the latent and to the fresh noise (g == h).
struct NcmConfig {
    int out_dim = 8;
    std::vector<PerturbRamp> ramps;
    NoiseKind noise_kind = NoiseKind::gaussian();
    MixPolicy mix_policy = MixPolicy::single_random_per_batch;

    void validate() const;

    std::string to_json() const;
    static NcmConfig from_json(const std::string& text);

    /// Ramp ranges from the reference configuration, shipped as named
    /// presets ("2d" and "3d"); both use Givens pairs (0,1)(2,3)(4,5)(6,7).
    static NcmConfig preset(const std::string& name);
};

/// Three-layer projection of a latent to the NCM working width.
Eigen::MatrixXd project_latent(const Eigen::MatrixXd& x, const DenseNet& proj,
                               Tape* tape = nullptr);

/// Draws the composite affine map at timestep t per the mix policy; one map
/// is shared by the whole batch.
AffineMap ncm_map_at(const NcmConfig& cfg, int t, int T, std::mt19937_64& rng);

/// Builds the perturbed/noised pair from a projected latent:
/// noisy = sqrt(ab_t) g(latent) + sqrt(1-ab_t) h(eps), target = h(eps).
NoisePair construct_pair(const Eigen::MatrixXd& latent, int t, const Schedule& s,
                         const NcmConfig& cfg, std::mt19937_64& rng);

}  // namespace dlfkit
