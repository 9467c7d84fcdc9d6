#pragma once

#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "dlfkit/ncm.hpp"
#include "dlfkit/netcore.hpp"
#include "dlfkit/scenes.hpp"
#include "dlfkit/schedule.hpp"

namespace dlfkit {

enum class TargetKind { h_eps, eps, x0, g_x0 };
enum class TimeMode { t_minus, t_plus, t_star };

const char* to_string(TargetKind k);
const char* to_string(TimeMode m);
TargetKind target_kind_from_string(const std::string& s);
TimeMode time_mode_from_string(const std::string& s);

struct TrainConfig {
    // Loss composition: total = lambda_a * diff_a + lambda_b * diff_b + task.
    double lambda_a = 0.1;
    double lambda_b = 0.1;
    double reg_weight = 1.0;
    TargetKind target_kind = TargetKind::h_eps;
    TimeMode time_mode = TimeMode::t_star;
    bool ncm_enabled = true;
    bool sgcl_enabled = true;

    double lr = 3e-3;
    int epochs = 30;
    int batch = 4;
    std::uint64_t seed = 1;

    // Toy architecture knobs.
    int hidden = 32;
    int latent_dim = 16;
    int ncm_dim = 8;
    int time_embed_dim = 32;
    int knn_k = 8;
    int sgcl_embed_dim = 8;

    // Schedule and NCM perturbation ramps (shared by both stages).
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    std::vector<PerturbRamp> ramps;

    static TrainConfig defaults();
    NcmConfig ncm_config() const;
    Schedule make_schedule() const { return Schedule::linear(schedule_T, beta_start, beta_end); }

    std::string to_json() const;
    static TrainConfig from_json(const std::string& text);
};

/// Backbones + head carry the task; projections + denoisers are the
/// auxiliary branch and are never touched by infer().
struct DlfModel {
    DenseNet backbone_a;   // points -> stage-1 latent
    DenseNet backbone_b;   // [latent, knn-pooled latent] -> stage-2 latent
    DenseNet head;         // latent -> (fg logit, offset x, offset y)
    DenseNet proj_a, proj_b;
    DenseNet denoiser_a, denoiser_b;
    DenseNet sem_net, geo_net, fuse_net;  // SGCL toys
    int knn_k = 8;
    bool sgcl_enabled = true;

    std::size_t backbone_param_count() const;
    std::size_t denoiser_param_count() const;

    void save(std::ostream& os) const;
    static DlfModel load(std::istream& is);
};

DlfModel make_dlf_model(const TrainConfig& cfg, std::mt19937_64& rng);

struct LossRecord {
    double task_loss = 0.0;
    double diff_a = 0.0;
    double diff_b = 0.0;
    double total = 0.0;
};

/// Per-net Adam states for one training run.
struct DlfOptimizers {
    AdamOptimizer backbone_a, backbone_b, head;
    AdamOptimizer proj_a, proj_b, denoiser_a, denoiser_b;
    AdamOptimizer sem_net, geo_net, fuse_net;

    explicit DlfOptimizers(const DlfModel& m);
};

/// One optimizer step over a batch of scenes with the full DLF objective.
/// rng_diff feeds only the diffusion branch (timesteps, noise, map choice)
/// so that a lambda=0 run consumes the same task-path randomness as the
/// baseline.
LossRecord dlf_train_step(DlfModel& model, std::span<const ToyScene> batch,
                          const Schedule& s, const TrainConfig& cfg,
                          DlfOptimizers& opt, std::mt19937_64& rng_diff);

/// FSP baseline step: lambda forced to zero, NCM/denoisers never evaluated.
LossRecord baseline_train_step(DlfModel& model, std::span<const ToyScene> batch,
                               const TrainConfig& cfg, DlfOptimizers& opt);

/// Single forward pass through backbones + head only.
Prediction infer(const DlfModel& model, const Eigen::MatrixXd& points);

Predictor make_predictor(const DlfModel& model);

/// Full training loop; returns one loss record per optimizer step.
std::vector<LossRecord> train_dlf(DlfModel& model, const std::vector<ToyScene>& scenes,
                                  const Schedule& s, const TrainConfig& cfg,
                                  bool baseline_mode);

// ---- score-matching DDPM comparison path (generative toy) ----

struct ScoreTrainConfig {
    int steps = 4000;
    int batch = 256;
    double lr = 2e-3;
    std::uint64_t seed = 7;
};

/// Standard epsilon-prediction training on a fixed dataset; returns the
/// per-step loss log.
std::vector<double> score_ddpm_train(DenseNet& denoiser, const Eigen::MatrixXd& data,
                                     const Schedule& s, const ScoreTrainConfig& cfg);

enum class SamplerKind { ancestral, sample_fit };

struct TrajectoryRow {
    int t = 0;
    double mean = 0.0;
    double var = 0.0;
};

/// T-step reverse chain from standard-normal initialization. `eps_fn` maps
/// (x_t, t) to the epsilon estimate, so analytic denoisers and trained nets
/// share one code path.
using EpsFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, int)>;

Eigen::MatrixXd reverse_chain(const EpsFn& eps_fn, const Schedule& s, int n, int dim,
                              SamplerKind sampler, std::mt19937_64& rng,
                              std::vector<TrajectoryRow>* trajectory = nullptr);

Eigen::MatrixXd score_ddpm_generate(const DenseNet& denoiser, const Schedule& s, int n,
                                    SamplerKind sampler, std::mt19937_64& rng,
                                    std::vector<TrajectoryRow>* trajectory = nullptr);

/// Analytically optimal epsilon predictor for scalar data x0 ~ N(mu0, sigma0^2):
/// eps*(x_t) = sqrt(1-ab_t) (x_t - sqrt(ab_t) mu0) / (ab_t sigma0^2 + 1 - ab_t).
Eigen::MatrixXd optimal_gaussian_eps(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                                     double mu0, double sigma0);

}  // namespace dlfkit
