#include "dlfkit/dlf.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

const char* to_string(TargetKind k) {
    switch (k) {
        case TargetKind::h_eps: return "h_eps";
        case TargetKind::eps: return "eps";
        case TargetKind::x0: return "x0";
        case TargetKind::g_x0: return "g_x0";
    }
    return "?";
}

const char* to_string(TimeMode m) {
    switch (m) {
        case TimeMode::t_minus: return "t_minus";
        case TimeMode::t_plus: return "t_plus";
        case TimeMode::t_star: return "t_star";
    }
    return "?";
}

TargetKind target_kind_from_string(const std::string& s) {
    if (s == "h_eps") return TargetKind::h_eps;
    if (s == "eps") return TargetKind::eps;
    if (s == "x0") return TargetKind::x0;
    if (s == "g_x0") return TargetKind::g_x0;
    throw std::invalid_argument("unknown target kind '" + s + "'");
}

TimeMode time_mode_from_string(const std::string& s) {
    if (s == "t_minus") return TimeMode::t_minus;
    if (s == "t_plus") return TimeMode::t_plus;
    if (s == "t_star") return TimeMode::t_star;
    throw std::invalid_argument("unknown time mode '" + s + "'");
}

TrainConfig TrainConfig::defaults() {
    TrainConfig cfg;
    // Mild ramp ranges for the desk-scale latent; the reference ranges are
    // available via NcmConfig::preset.
    cfg.ramps = {
        {PerturbKind::translation, 0.0, 1.0, {}},
        {PerturbKind::scaling, 1.0, 2.0, {}},
        {PerturbKind::rotation, 0.0, 1.5707963, {{0, 1}, {2, 3}, {4, 5}, {6, 7}}},
    };
    return cfg;
}

NcmConfig TrainConfig::ncm_config() const {
    NcmConfig ncm;
    ncm.out_dim = ncm_dim;
    if (ncm_enabled) ncm.ramps = ramps;
    ncm.validate();
    return ncm;
}

std::string TrainConfig::to_json() const {
    nlohmann::json j;
    j["lambda_a"] = lambda_a;
    j["lambda_b"] = lambda_b;
    j["reg_weight"] = reg_weight;
    j["target_kind"] = to_string(target_kind);
    j["time_mode"] = to_string(time_mode);
    j["ncm_enabled"] = ncm_enabled;
    j["sgcl_enabled"] = sgcl_enabled;
    j["lr"] = lr;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["seed"] = seed;
    j["hidden"] = hidden;
    j["latent_dim"] = latent_dim;
    j["ncm_dim"] = ncm_dim;
    j["time_embed_dim"] = time_embed_dim;
    j["knn_k"] = knn_k;
    j["sgcl_embed_dim"] = sgcl_embed_dim;
    j["schedule_T"] = schedule_T;
    j["beta_start"] = beta_start;
    j["beta_end"] = beta_end;
    j["ramps"] = nlohmann::json::array();
    for (auto& r : ramps) j["ramps"].push_back(nlohmann::json::parse(r.to_json()));
    return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    TrainConfig cfg = defaults();
    cfg.lambda_a = j.value("lambda_a", cfg.lambda_a);
    cfg.lambda_b = j.value("lambda_b", cfg.lambda_b);
    if (j.contains("lambda")) {  // single-lambda shorthand
        cfg.lambda_a = j["lambda"].get<double>();
        cfg.lambda_b = cfg.lambda_a;
    }
    cfg.reg_weight = j.value("reg_weight", cfg.reg_weight);
    if (j.contains("target_kind"))
        cfg.target_kind = target_kind_from_string(j["target_kind"].get<std::string>());
    if (j.contains("time_mode"))
        cfg.time_mode = time_mode_from_string(j["time_mode"].get<std::string>());
    cfg.ncm_enabled = j.value("ncm_enabled", cfg.ncm_enabled);
    cfg.sgcl_enabled = j.value("sgcl_enabled", cfg.sgcl_enabled);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch = j.value("batch", cfg.batch);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.latent_dim = j.value("latent_dim", cfg.latent_dim);
    cfg.ncm_dim = j.value("ncm_dim", cfg.ncm_dim);
    cfg.time_embed_dim = j.value("time_embed_dim", cfg.time_embed_dim);
    cfg.knn_k = j.value("knn_k", cfg.knn_k);
    cfg.sgcl_embed_dim = j.value("sgcl_embed_dim", cfg.sgcl_embed_dim);
    cfg.schedule_T = j.value("schedule_T", cfg.schedule_T);
    cfg.beta_start = j.value("beta_start", cfg.beta_start);
    cfg.beta_end = j.value("beta_end", cfg.beta_end);
    if (j.contains("ramps")) {
        cfg.ramps.clear();
        for (auto& rj : j["ramps"]) cfg.ramps.push_back(PerturbRamp::from_json(rj.dump()));
    }
    if (cfg.lambda_a < 0.0 || cfg.lambda_b < 0.0)
        throw std::invalid_argument("TrainConfig: lambda must be >= 0");
    return cfg;
}

DlfModel make_dlf_model(const TrainConfig& cfg, std::mt19937_64& rng) {
    DlfModel m;
    m.knn_k = cfg.knn_k;
    m.sgcl_enabled = cfg.sgcl_enabled;
    int D = cfg.latent_dim, H = cfg.hidden, P = cfg.ncm_dim, K = cfg.sgcl_embed_dim;
    int temb = cfg.time_mode == TimeMode::t_minus ? 0 : cfg.time_embed_dim;

    m.backbone_a = DenseNet::make({2, H, D}, Activation::silu, 0, 0, rng);
    m.backbone_b = DenseNet::make({2 * D, H, D}, Activation::silu, 0, 0, rng);
    m.head = DenseNet::make({D, H, 3}, Activation::silu, 0, 0, rng);
    int pm = (D + P) / 2;
    m.proj_a = DenseNet::make({D, pm, pm, P}, Activation::silu, 0, 0, rng);
    m.proj_b = DenseNet::make({D, pm, pm, P}, Activation::silu, 0, 0, rng);
    m.denoiser_a = DenseNet::make({P, H, H, P}, Activation::silu, temb, 0, rng);
    m.denoiser_b = DenseNet::make({P, H, H, P}, Activation::silu, temb, 0, rng);
    m.sem_net = DenseNet::make({2, K}, Activation::linear, 0, 0, rng);
    m.geo_net = DenseNet::make({5, K, K}, Activation::silu, 0, 0, rng);
    m.fuse_net = DenseNet::make({2 * K, K, D}, Activation::silu, 0, 0, rng);
    return m;
}

std::size_t DlfModel::backbone_param_count() const {
    return backbone_a.param_count() + backbone_b.param_count() + head.param_count();
}

std::size_t DlfModel::denoiser_param_count() const {
    return proj_a.param_count() + proj_b.param_count() + denoiser_a.param_count() +
           denoiser_b.param_count();
}

namespace {

constexpr std::uint32_t kModelMagic = 0x444c464d;  // "DLFM"

/// k-nearest-neighbour mean pooling over fixed point positions. Neighbour
/// sets include the point itself; ties break by index.
struct KnnPool {
    std::vector<std::vector<int>> neighbors;

    static KnnPool build(const Eigen::MatrixXd& points, int k) {
        int n = static_cast<int>(points.rows());
        k = std::min(k, n);
        KnnPool pool;
        pool.neighbors.resize(n);
        std::vector<std::pair<double, int>> dist(n);
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j)
                dist[j] = {(points.row(i) - points.row(j)).squaredNorm(), j};
            std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
            pool.neighbors[i].reserve(k);
            for (int j = 0; j < k; ++j) pool.neighbors[i].push_back(dist[j].second);
        }
        return pool;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& latent) const {
        Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(latent.rows(), latent.cols());
        for (size_t i = 0; i < neighbors.size(); ++i) {
            for (int j : neighbors[i]) pooled.row(i) += latent.row(j);
            pooled.row(i) /= static_cast<double>(neighbors[i].size());
        }
        return pooled;
    }

    Eigen::MatrixXd pullback(const Eigen::MatrixXd& grad_pooled) const {
        Eigen::MatrixXd grad =
            Eigen::MatrixXd::Zero(grad_pooled.rows(), grad_pooled.cols());
        for (size_t i = 0; i < neighbors.size(); ++i) {
            double w = 1.0 / static_cast<double>(neighbors[i].size());
            for (int j : neighbors[i]) grad.row(j) += w * grad_pooled.row(i);
        }
        return grad;
    }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// BCE-with-logits (mean over points) + smooth-L1 on foreground offsets
/// (mean over foreground points and coordinates, scaled by reg_weight).
double task_loss_and_grad(const Eigen::MatrixXd& head_out, const ToyScene& scene,
                          double reg_weight, Eigen::MatrixXd* grad_out) {
    Eigen::Index n = head_out.rows();
    double loss = 0.0;
    if (grad_out) *grad_out = Eigen::MatrixXd::Zero(n, 3);

    long n_fg = std::count(scene.labels.begin(), scene.labels.end(), 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        double z = head_out(i, 0);
        double y = scene.labels[i];
        loss += (std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)))) / n;
        if (grad_out) (*grad_out)(i, 0) = (sigmoid(z) - y) / n;

        if (scene.labels[i] == 1 && !scene.boxes.empty()) {
            Eigen::Vector2d gt = scene.boxes[scene.assignment[i]].center -
                                 scene.points.row(i).transpose();
            for (int c = 0; c < 2; ++c) {
                double r = head_out(i, 1 + c) - gt[c];
                double h = std::abs(r) < 1.0 ? 0.5 * r * r : std::abs(r) - 0.5;
                loss += reg_weight * h / static_cast<double>(2 * n_fg);
                if (grad_out)
                    (*grad_out)(i, 1 + c) = reg_weight * std::clamp(r, -1.0, 1.0) /
                                            static_cast<double>(2 * n_fg);
            }
        }
    }
    return loss;
}

struct SgclContext {
    std::vector<int> mask;
    Eigen::MatrixXd box_fields;
};

SgclContext sgcl_context_for_training(const ToyScene& scene) {
    SgclContext ctx;
    if (scene.boxes.empty()) {
        ctx.mask.assign(scene.points.rows(), 0);
        ctx.box_fields = Eigen::MatrixXd::Zero(scene.points.rows(), 5);
        return ctx;
    }
    ctx.mask = inside_mask(scene.points, scene.boxes, scene.assignment);
    ctx.box_fields = box_fields_per_point(scene.boxes, scene.assignment, ctx.mask);
    return ctx;
}

/// All-background condition used at inference, where ground-truth boxes are
/// unavailable: mask 0 and zero-filled box fields, matching the training
/// convention for background points.
SgclContext sgcl_context_neutral(Eigen::Index n) {
    SgclContext ctx;
    ctx.mask.assign(n, 0);
    ctx.box_fields = Eigen::MatrixXd::Zero(n, 5);
    return ctx;
}

struct BatchGrads {
    GradientBuffer backbone_a, backbone_b, head;
    GradientBuffer proj_a, proj_b, denoiser_a, denoiser_b;
    GradientBuffer sem_net, geo_net, fuse_net;

    explicit BatchGrads(const DlfModel& m)
        : backbone_a(m.backbone_a.zero_grads()),
          backbone_b(m.backbone_b.zero_grads()),
          head(m.head.zero_grads()),
          proj_a(m.proj_a.zero_grads()),
          proj_b(m.proj_b.zero_grads()),
          denoiser_a(m.denoiser_a.zero_grads()),
          denoiser_b(m.denoiser_b.zero_grads()),
          sem_net(m.sem_net.zero_grads()),
          geo_net(m.geo_net.zero_grads()),
          fuse_net(m.fuse_net.zero_grads()) {}
};

struct DiffBranchResult {
    double loss = 0.0;
    Eigen::MatrixXd grad_latent;  // contribution scaled by lambda
};

/// Projection -> NCM pair -> denoiser -> MSE. Gradients for the projection
/// and denoiser parameters, plus the latent contribution, all carry the
/// lambda weight. Targets are treated as constants.
DiffBranchResult diffusion_branch(const DenseNet& proj, const DenseNet& denoiser,
                                  GradientBuffer& proj_grads,
                                  GradientBuffer& denoiser_grads,
                                  const Eigen::MatrixXd& latent, int t,
                                  const Schedule& s, const NcmConfig& ncm,
                                  TargetKind target_kind, TimeMode time_mode,
                                  double lambda, std::mt19937_64& rng_diff) {
    Tape proj_tape;
    Eigen::MatrixXd p = project_latent(latent, proj, &proj_tape);

    AffineMap map = ncm_map_at(ncm, t, s.T(), rng_diff);
    Eigen::MatrixXd eps = draw_noise(ncm.noise_kind, rng_diff, p.rows(), p.cols());
    NoisePair pair = noise_forward_affine(s, t, p, eps, map, map);

    Eigen::MatrixXd target;
    switch (target_kind) {
        case TargetKind::h_eps: target = pair.target; break;
        case TargetKind::eps: target = eps; break;
        case TargetKind::x0: target = p; break;
        case TargetKind::g_x0: target = map.apply_rows(p); break;
    }

    Tape den_tape;
    std::optional<int> t_arg;
    if (time_mode != TimeMode::t_minus) t_arg = t;
    Eigen::MatrixXd pred = denoiser.forward(pair.noisy, t_arg, nullptr, &den_tape);

    double numel = static_cast<double>(pred.size());
    DiffBranchResult result;
    result.loss = (pred - target).squaredNorm() / numel;

    Eigen::MatrixXd dpred = (2.0 * lambda / numel) * (pred - target);
    BackwardResult den_bw = denoiser.backward(dpred, den_tape);
    denoiser_grads.accumulate(den_bw.grads);

    // noisy = sqrt(ab) g(p) + ..., with g linear part S*R shared by g and h.
    Eigen::MatrixXd dp = s.sqrt_alpha_bar(t) * pair.g_map.pullback_rows(den_bw.grad_input);
    BackwardResult proj_bw = proj.backward(dp, proj_tape);
    proj_grads.accumulate(proj_bw.grads);
    result.grad_latent = std::move(proj_bw.grad_input);
    return result;
}

LossRecord accumulate_scene(DlfModel& model, const ToyScene& scene, const Schedule& s,
                            const TrainConfig& cfg, BatchGrads& grads,
                            std::mt19937_64* rng_diff, bool baseline_mode) {
    // ---- forward ----
    Tape tape_a;
    Eigen::MatrixXd latent_a = model.backbone_a.forward(scene.points, {}, nullptr, &tape_a);

    KnnPool pool = KnnPool::build(scene.points, model.knn_k);
    Eigen::MatrixXd pooled = pool.apply(latent_a);
    Eigen::MatrixXd xb(latent_a.rows(), 2 * latent_a.cols());
    xb << latent_a, pooled;

    Tape tape_b;
    Eigen::MatrixXd latent_b = model.backbone_b.forward(xb, {}, nullptr, &tape_b);

    Tape sem_tape, geo_tape, fuse_tape;
    Eigen::MatrixXd head_in = latent_b;
    SgclContext sgcl_ctx;
    if (cfg.sgcl_enabled) {
        sgcl_ctx = sgcl_context_for_training(scene);
        ConditionEmbedding emb =
            embed_and_fuse(latent_b, sgcl_ctx.mask, sgcl_ctx.box_fields, model.sem_net,
                           model.geo_net, model.fuse_net, &sem_tape, &geo_tape,
                           &fuse_tape);
        head_in = emb.fused;
    }

    Tape head_tape;
    Eigen::MatrixXd head_out = model.head.forward(head_in, {}, nullptr, &head_tape);

    LossRecord rec;
    Eigen::MatrixXd grad_head_out;
    rec.task_loss = task_loss_and_grad(head_out, scene, cfg.reg_weight, &grad_head_out);

    // ---- task backward ----
    BackwardResult head_bw = model.head.backward(grad_head_out, head_tape);
    grads.head.accumulate(head_bw.grads);

    Eigen::MatrixXd grad_latent_b = head_bw.grad_input;
    if (cfg.sgcl_enabled) {
        BackwardResult fuse_bw = model.fuse_net.backward(head_bw.grad_input, fuse_tape);
        grads.fuse_net.accumulate(fuse_bw.grads);
        int K = model.sem_net.output_dim();
        BackwardResult sem_bw =
            model.sem_net.backward(fuse_bw.grad_input.leftCols(K), sem_tape);
        grads.sem_net.accumulate(sem_bw.grads);
        BackwardResult geo_bw =
            model.geo_net.backward(fuse_bw.grad_input.rightCols(K), geo_tape);
        grads.geo_net.accumulate(geo_bw.grads);
        // Residual form: the fuse inputs do not depend on latent_b.
    }

    // ---- diffusion branch ----
    DiffBranchResult da, db;
    if (!baseline_mode) {
        NcmConfig ncm = cfg.ncm_config();
        int t_a = sample_timestep(*rng_diff, s.T());
        int t_b = cfg.time_mode == TimeMode::t_plus ? t_a
                                                    : sample_timestep(*rng_diff, s.T());

        da = diffusion_branch(model.proj_a, model.denoiser_a, grads.proj_a,
                              grads.denoiser_a, latent_a, t_a, s, ncm, cfg.target_kind,
                              cfg.time_mode, cfg.lambda_a, *rng_diff);
        rec.diff_a = da.loss;

        db = diffusion_branch(model.proj_b, model.denoiser_b, grads.proj_b,
                              grads.denoiser_b, latent_b, t_b, s, ncm, cfg.target_kind,
                              cfg.time_mode, cfg.lambda_b, *rng_diff);
        rec.diff_b = db.loss;

        grad_latent_b += db.grad_latent;
    }

    BackwardResult bb_bw = model.backbone_b.backward(grad_latent_b, tape_b);
    grads.backbone_b.accumulate(bb_bw.grads);

    int D = model.backbone_a.output_dim();
    Eigen::MatrixXd grad_latent_a =
        bb_bw.grad_input.leftCols(D) + pool.pullback(bb_bw.grad_input.rightCols(D));
    if (!baseline_mode) grad_latent_a += da.grad_latent;

    rec.total = rec.task_loss + cfg.lambda_a * rec.diff_a + cfg.lambda_b * rec.diff_b;

    BackwardResult ba_bw = model.backbone_a.backward(grad_latent_a, tape_a);
    grads.backbone_a.accumulate(ba_bw.grads);
    return rec;
}

}  // namespace

DlfOptimizers::DlfOptimizers(const DlfModel& m)
    : backbone_a(m.backbone_a),
      backbone_b(m.backbone_b),
      head(m.head),
      proj_a(m.proj_a),
      proj_b(m.proj_b),
      denoiser_a(m.denoiser_a),
      denoiser_b(m.denoiser_b),
      sem_net(m.sem_net),
      geo_net(m.geo_net),
      fuse_net(m.fuse_net) {}

LossRecord dlf_train_step(DlfModel& model, std::span<const ToyScene> batch,
                          const Schedule& s, const TrainConfig& cfg,
                          DlfOptimizers& opt, std::mt19937_64& rng_diff) {
    if (batch.empty()) throw std::invalid_argument("dlf_train_step: empty batch");
    if (cfg.ncm_enabled)
        for (auto& r : cfg.ramps)
            if (r.kind == PerturbKind::rotation && cfg.ncm_dim % 2 != 0)
                throw std::invalid_argument(
                    "dlf_train_step: rotation ramp on odd latent width");

    BatchGrads grads(model);
    LossRecord acc;
    for (auto& scene : batch) {
        LossRecord r = accumulate_scene(model, scene, s, cfg, grads, &rng_diff, false);
        acc.task_loss += r.task_loss;
        acc.diff_a += r.diff_a;
        acc.diff_b += r.diff_b;
        acc.total += r.total;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    acc.task_loss *= inv;
    acc.diff_a *= inv;
    acc.diff_b *= inv;
    acc.total *= inv;

    auto scale_all = [&](GradientBuffer& g) { g.scale(inv); };
    scale_all(grads.backbone_a);
    scale_all(grads.backbone_b);
    scale_all(grads.head);
    scale_all(grads.proj_a);
    scale_all(grads.proj_b);
    scale_all(grads.denoiser_a);
    scale_all(grads.denoiser_b);
    scale_all(grads.sem_net);
    scale_all(grads.geo_net);
    scale_all(grads.fuse_net);

    opt.backbone_a.step(model.backbone_a, grads.backbone_a, cfg.lr);
    opt.backbone_b.step(model.backbone_b, grads.backbone_b, cfg.lr);
    opt.head.step(model.head, grads.head, cfg.lr);
    opt.proj_a.step(model.proj_a, grads.proj_a, cfg.lr);
    opt.proj_b.step(model.proj_b, grads.proj_b, cfg.lr);
    opt.denoiser_a.step(model.denoiser_a, grads.denoiser_a, cfg.lr);
    opt.denoiser_b.step(model.denoiser_b, grads.denoiser_b, cfg.lr);
    if (cfg.sgcl_enabled) {
        opt.sem_net.step(model.sem_net, grads.sem_net, cfg.lr);
        opt.geo_net.step(model.geo_net, grads.geo_net, cfg.lr);
        opt.fuse_net.step(model.fuse_net, grads.fuse_net, cfg.lr);
    }
    return acc;
}

LossRecord baseline_train_step(DlfModel& model, std::span<const ToyScene> batch,
                               const TrainConfig& cfg, DlfOptimizers& opt) {
    if (batch.empty()) throw std::invalid_argument("baseline_train_step: empty batch");
    Schedule s = Schedule::linear(1, cfg.beta_start, cfg.beta_end);  // unused

    BatchGrads grads(model);
    LossRecord acc;
    for (auto& scene : batch) {
        LossRecord r = accumulate_scene(model, scene, s, cfg, grads, nullptr, true);
        acc.task_loss += r.task_loss;
        acc.total += r.total;
    }
    double inv = 1.0 / static_cast<double>(batch.size());
    acc.task_loss *= inv;
    acc.total *= inv;

    grads.backbone_a.scale(inv);
    grads.backbone_b.scale(inv);
    grads.head.scale(inv);
    grads.sem_net.scale(inv);
    grads.geo_net.scale(inv);
    grads.fuse_net.scale(inv);

    opt.backbone_a.step(model.backbone_a, grads.backbone_a, cfg.lr);
    opt.backbone_b.step(model.backbone_b, grads.backbone_b, cfg.lr);
    opt.head.step(model.head, grads.head, cfg.lr);
    if (cfg.sgcl_enabled) {
        opt.sem_net.step(model.sem_net, grads.sem_net, cfg.lr);
        opt.geo_net.step(model.geo_net, grads.geo_net, cfg.lr);
        opt.fuse_net.step(model.fuse_net, grads.fuse_net, cfg.lr);
    }
    return acc;
}

Prediction infer(const DlfModel& model, const Eigen::MatrixXd& points) {
    Eigen::MatrixXd latent_a = model.backbone_a.forward(points);
    KnnPool pool = KnnPool::build(points, model.knn_k);
    Eigen::MatrixXd pooled = pool.apply(latent_a);
    Eigen::MatrixXd xb(latent_a.rows(), 2 * latent_a.cols());
    xb << latent_a, pooled;
    Eigen::MatrixXd latent_b = model.backbone_b.forward(xb);

    Eigen::MatrixXd head_in = latent_b;
    if (model.sgcl_enabled) {
        SgclContext ctx = sgcl_context_neutral(points.rows());
        head_in = embed_and_fuse(latent_b, ctx.mask, ctx.box_fields, model.sem_net,
                                 model.geo_net, model.fuse_net)
                      .fused;
    }
    Eigen::MatrixXd out = model.head.forward(head_in);

    Prediction pred;
    pred.fg_prob = out.col(0).unaryExpr([](double z) { return sigmoid(z); });
    pred.offsets = out.rightCols(2);
    return pred;
}

Predictor make_predictor(const DlfModel& model) {
    return [&model](const Eigen::MatrixXd& points) { return infer(model, points); };
}

std::vector<LossRecord> train_dlf(DlfModel& model, const std::vector<ToyScene>& scenes,
                                  const Schedule& s, const TrainConfig& cfg,
                                  bool baseline_mode) {
    if (scenes.empty()) throw std::invalid_argument("train_dlf: no scenes");
    DlfOptimizers opt(model);
    std::mt19937_64 rng_task(cfg.seed ^ 0x7461736bULL);
    std::mt19937_64 rng_diff(cfg.seed ^ 0x64696666ULL);

    std::vector<LossRecord> log;
    std::vector<size_t> order(scenes.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng_task);
        for (size_t at = 0; at < order.size(); at += cfg.batch) {
            size_t end = std::min(order.size(), at + cfg.batch);
            std::vector<ToyScene> batch;
            batch.reserve(end - at);
            for (size_t i = at; i < end; ++i) batch.push_back(scenes[order[i]]);
            LossRecord rec = baseline_mode
                                 ? baseline_train_step(model, batch, cfg, opt)
                                 : dlf_train_step(model, batch, s, cfg, opt, rng_diff);
            log.push_back(rec);
        }
    }
    return log;
}

std::vector<double> score_ddpm_train(DenseNet& denoiser, const Eigen::MatrixXd& data,
                                     const Schedule& s, const ScoreTrainConfig& cfg) {
    std::mt19937_64 rng(cfg.seed);
    AdamOptimizer opt(denoiser);
    std::uniform_int_distribution<Eigen::Index> pick(0, data.rows() - 1);

    std::vector<double> losses;
    losses.reserve(cfg.steps);
    for (int step = 0; step < cfg.steps; ++step) {
        Eigen::MatrixXd x0(cfg.batch, data.cols());
        for (int i = 0; i < cfg.batch; ++i) x0.row(i) = data.row(pick(rng));
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd eps = draw_noise(NoiseKind::gaussian(), rng, x0.rows(), x0.cols());
        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);

        Tape tape;
        Eigen::MatrixXd pred = denoiser.forward(x_t, t, nullptr, &tape);
        double numel = static_cast<double>(pred.size());
        losses.push_back((pred - eps).squaredNorm() / numel);

        Eigen::MatrixXd dpred = (2.0 / numel) * (pred - eps);
        GradientBuffer grads = denoiser.backward(dpred, tape).grads;
        opt.step(denoiser, grads, cfg.lr);
    }
    return losses;
}

Eigen::MatrixXd reverse_chain(const EpsFn& eps_fn, const Schedule& s, int n, int dim,
                              SamplerKind sampler, std::mt19937_64& rng,
                              std::vector<TrajectoryRow>* trajectory) {
    Eigen::MatrixXd x = draw_noise(NoiseKind::gaussian(), rng, n, dim);
    if (n == 0) return x;
    for (int t = s.T(); t >= 1; --t) {
        Eigen::MatrixXd eps_hat = eps_fn(x, t);
        if (sampler == SamplerKind::ancestral) {
            x = ancestral_step(s, t, x, eps_hat, rng);
        } else {
            Eigen::MatrixXd eps_new =
                t > 1 ? draw_noise(NoiseKind::gaussian(), rng, n, dim)
                      : Eigen::MatrixXd::Zero(n, dim);
            x = sample_fit_step(s, t, x, eps_hat, eps_new);
        }
        if (trajectory) {
            double mean = x.mean();
            double var = (x.array() - mean).square().sum() /
                         std::max<double>(1.0, static_cast<double>(x.size()) - 1.0);
            trajectory->push_back({t, mean, var});
        }
    }
    return x;
}

Eigen::MatrixXd score_ddpm_generate(const DenseNet& denoiser, const Schedule& s, int n,
                                    SamplerKind sampler, std::mt19937_64& rng,
                                    std::vector<TrajectoryRow>* trajectory) {
    EpsFn fn = [&denoiser](const Eigen::MatrixXd& x, int t) {
        return denoiser.forward(x, t);
    };
    return reverse_chain(fn, s, n, denoiser.input_dim(), sampler, rng, trajectory);
}

Eigen::MatrixXd optimal_gaussian_eps(const Schedule& s, int t, const Eigen::MatrixXd& x_t,
                                     double mu0, double sigma0) {
    double ab = s.alpha_bar(t);
    double denom = ab * sigma0 * sigma0 + 1.0 - ab;
    return std::sqrt(1.0 - ab) * (x_t.array() - std::sqrt(ab) * mu0).matrix() / denom;
}

void DlfModel::save(std::ostream& os) const {
    nlohmann::json j;
    j["version"] = 1;
    j["knn_k"] = knn_k;
    j["sgcl_enabled"] = sgcl_enabled;
    std::string manifest = j.dump();
    std::uint64_t mlen = manifest.size();
    os.write(reinterpret_cast<const char*>(&kModelMagic), sizeof(kModelMagic));
    os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    os.write(manifest.data(), static_cast<std::streamsize>(mlen));
    for (const DenseNet* net :
         {&backbone_a, &backbone_b, &head, &proj_a, &proj_b, &denoiser_a, &denoiser_b,
          &sem_net, &geo_net, &fuse_net})
        net->save(os);
}

DlfModel DlfModel::load(std::istream& is) {
    std::uint32_t magic = 0;
    std::uint64_t mlen = 0;
    is.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    if (!is || magic != kModelMagic) throw std::runtime_error("DlfModel: bad checkpoint");
    is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string manifest(mlen, '\0');
    is.read(manifest.data(), static_cast<std::streamsize>(mlen));
    auto j = nlohmann::json::parse(manifest);

    DlfModel m;
    m.knn_k = j.at("knn_k").get<int>();
    m.sgcl_enabled = j.at("sgcl_enabled").get<bool>();
    for (DenseNet* net : {&m.backbone_a, &m.backbone_b, &m.head, &m.proj_a, &m.proj_b,
                          &m.denoiser_a, &m.denoiser_b, &m.sem_net, &m.geo_net,
                          &m.fuse_net})
        *net = DenseNet::load(is);
    return m;
}

}  // namespace dlfkit
