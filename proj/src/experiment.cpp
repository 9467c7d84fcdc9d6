#include "dlfkit/experiment.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <nlohmann/json.hpp>

#include "dlfkit/sgcl.hpp"

namespace dlfkit {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os << content;
}

std::string read_text(const fs::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

/// Wall-clock timestamps are quarantined here so every other emitted file is
/// a pure function of (config, seed).
void write_run_manifest(const fs::path& out_dir, const std::string& command) {
    auto now = std::chrono::system_clock::now();
    std::time_t tt = std::chrono::system_clock::to_time_t(now);
    char stamp[32];
    std::strftime(stamp, sizeof(stamp), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&tt));
    nlohmann::json j;
    j["command"] = command;
    j["timestamp_utc"] = stamp;
    write_text(out_dir / "run_manifest.json", j.dump(2) + "\n");
}

fs::path prepare_out_dir(const std::string& out_dir, const std::string& fallback) {
    fs::path p = out_dir.empty() ? fs::path(fallback) : fs::path(out_dir);
    fs::create_directories(p);
    return p;
}

int thread_cap() {
    int hw = static_cast<int>(std::thread::hardware_concurrency());
    if (hw < 1) hw = 1;
    if (const char* env = std::getenv("DLFKIT_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return std::min(v, hw);
    }
    return hw;
}

// ---------------------------------------------------------------------------
// verify suites
// ---------------------------------------------------------------------------

void add(VerifyReport& rep, const std::string& name, double measured, double tol) {
    rep.results.push_back({name, measured <= tol, measured, tol});
}

void add_bool(VerifyReport& rep, const std::string& name, bool pass) {
    rep.results.push_back({name, pass, pass ? 0.0 : 1.0, 0.5});
}

AffineMap random_map(std::mt19937_64& rng, int dim) {
    std::uniform_real_distribution<double> ua(-3.14159, 3.14159);
    std::uniform_real_distribution<double> us(0.2, 3.0);
    std::normal_distribution<double> un(0.0, 1.0);
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> angles;
    for (int i = 0; i + 1 < dim; i += 2) {
        pairs.push_back({i, i + 1});
        angles.push_back(ua(rng));
    }
    Eigen::VectorXd t(dim);
    for (int i = 0; i < dim; ++i) t[i] = un(rng);
    AffineMap rot = AffineMap::givens(pairs, angles, dim);
    return AffineMap(rot.rotation(), us(rng), t);
}

void suite_affine(VerifyReport& rep, std::mt19937_64& rng) {
    const int dim = 8;
    std::normal_distribution<double> un(0.0, 1.0);
    auto randvec = [&](int d) {
        Eigen::VectorXd v(d);
        for (int i = 0; i < d; ++i) v[i] = un(rng);
        return v;
    };

    double worst_rt = 0.0, worst_orth = 0.0, worst_comp = 0.0;
    for (int it = 0; it < 1000; ++it) {
        AffineMap a = random_map(rng, dim), b = random_map(rng, dim);
        Eigen::VectorXd x = randvec(dim);
        worst_rt = std::max(worst_rt,
                            (a.inverse().apply(a.apply(x)) - x).cwiseAbs().maxCoeff());
        worst_orth = std::max(
            worst_orth, (a.rotation().transpose() * a.rotation() -
                         Eigen::MatrixXd::Identity(dim, dim))
                            .cwiseAbs()
                            .maxCoeff());
        worst_comp = std::max(worst_comp, (AffineMap::compose(a, b).apply(x) -
                                           a.apply(b.apply(x)))
                                              .cwiseAbs()
                                              .maxCoeff());
    }
    add(rep, "affine.invert_roundtrip", worst_rt, 1e-10);
    add(rep, "affine.givens_orthogonality", worst_orth, 1e-12);
    add(rep, "affine.compose_matches_sequential", worst_comp, 1e-10);

    PerturbRamp ramp{PerturbKind::scaling, 0.3, 2.5, {}};
    double ep = std::max(
        std::abs(ramp.param_at(1, 100) - (0.3 + 0.01 * (2.5 - 0.3))),
        std::abs(ramp.param_at(100, 100) - 2.5));
    add(rep, "affine.ramp_endpoints", ep, 0.0);

    // Pullback vs finite difference of sum(apply_rows).
    {
        AffineMap a = random_map(rng, dim);
        Eigen::MatrixXd X(4, dim);
        for (int i = 0; i < X.size(); ++i) X.data()[i] = un(rng);
        Eigen::MatrixXd grad_y = Eigen::MatrixXd::Ones(4, dim);
        Eigen::MatrixXd an = a.pullback_rows(grad_y);
        double worst = 0.0;
        double h = 1e-6;
        for (int i = 0; i < X.rows(); ++i)
            for (int j = 0; j < dim; ++j) {
                Eigen::MatrixXd Xp = X, Xm = X;
                Xp(i, j) += h;
                Xm(i, j) -= h;
                double fd =
                    (a.apply_rows(Xp).sum() - a.apply_rows(Xm).sum()) / (2 * h);
                worst = std::max(worst, std::abs(fd - an(i, j)));
            }
        add(rep, "affine.pullback_finite_difference", worst, 1e-6);
    }

    // Input corruption identities at zero magnitude.
    {
        Eigen::MatrixXd pts(64, 2);
        for (int i = 0; i < pts.size(); ++i)
            pts.data()[i] = std::uniform_real_distribution<double>(-1, 1)(rng);
        double worst = 0.0;
        for (auto spec : {CorruptionSpec{CorruptionKind::gaussian, 0.0},
                          CorruptionSpec{CorruptionKind::translate, 0.0},
                          CorruptionSpec{CorruptionKind::scale, 1.0},
                          CorruptionSpec{CorruptionKind::rotate, 0.0}})
            worst = std::max(worst,
                             (corrupt(pts, spec, rng) - pts).cwiseAbs().maxCoeff());
        add(rep, "scenes.corrupt_zero_identity", worst, 0.0);

        Eigen::MatrixXd rot =
            corrupt(pts, {CorruptionKind::rotate, 0.31}, rng);
        Eigen::MatrixXd scl = corrupt(pts, {CorruptionKind::scale, 0.95}, rng);
        double worst_rot = 0.0, worst_scl = 0.0;
        for (int i = 1; i < pts.rows(); ++i) {
            double d0 = (pts.row(i) - pts.row(0)).norm();
            worst_rot = std::max(
                worst_rot, std::abs((rot.row(i) - rot.row(0)).norm() - d0));
            worst_scl = std::max(
                worst_scl,
                std::abs((scl.row(i) - scl.row(0)).norm() - 0.95 * d0));
        }
        add(rep, "scenes.rotate_preserves_distances", worst_rot, 1e-12);
        add(rep, "scenes.scale_multiplies_distances", worst_scl, 1e-12);
    }
}

void suite_diffusion(VerifyReport& rep, std::mt19937_64& rng) {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    double prod = 1.0;
    for (int t = 1; t <= 1000; ++t) prod *= 1.0 - s.beta(t);
    add(rep, "schedule.alpha_bar_brute_force", std::abs(s.alpha_bar(1000) - prod),
        1e-12);
    add(rep, "schedule.posterior_var_t1_zero", std::abs(s.posterior_var(1)), 0.0);
    bool monotone = true;
    for (int t = 1; t <= 1000; ++t)
        if (!(s.alpha_bar(t) < s.alpha_bar(t - 1))) monotone = false;
    add_bool(rep, "schedule.alpha_bar_strictly_decreasing", monotone);

    std::normal_distribution<double> un(0.0, 1.0);
    auto randmat = [&](int n, int d) {
        Eigen::MatrixXd m(n, d);
        for (int i = 0; i < m.size(); ++i) m.data()[i] = un(rng);
        return m;
    };

    // Exact-noise round trip: stepping with the true eps recovers the exact
    // x_{t-1} built from the same x0 and eps'.
    double worst_plain = 0.0, worst_affine = 0.0, worst_mutated = 0.0;
    const int dim = 8;
    for (int it = 0; it < 2000; ++it) {
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd x0 = randmat(2, dim), eps = randmat(2, dim),
                        eps2 = randmat(2, dim);
        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
        Eigen::MatrixXd expect =
            s.sqrt_alpha_bar(t - 1) * x0 +
            std::sqrt(1.0 - s.alpha_bar(t - 1)) * eps2;
        Eigen::MatrixXd got = sample_fit_step(s, t, x_t, eps, eps2);
        worst_plain = std::max(worst_plain, (got - expect).cwiseAbs().maxCoeff());

        // Deliberately wrong sign: the round trip must break (control).
        Eigen::MatrixXd bad =
            sample_fit_step(s, t, x_t, Eigen::MatrixXd(-eps), eps2);
        worst_mutated = std::max(worst_mutated,
                                 (bad - expect).cwiseAbs().maxCoeff());

        AffineMap g_t = random_map(rng, dim), g_prev = random_map(rng, dim);
        NoisePair pair = noise_forward_affine(s, t, x0, eps, g_t, g_t);
        Eigen::MatrixXd expect_tf =
            s.sqrt_alpha_bar(t - 1) * g_prev.apply_rows(x0) +
            std::sqrt(1.0 - s.alpha_bar(t - 1)) * g_prev.apply_rows(eps2);
        Eigen::MatrixXd got_tf = sample_fit_step_affine(
            s, t, pair.noisy, eps, eps2, g_t, g_prev, g_t, g_prev);
        worst_affine =
            std::max(worst_affine, (got_tf - expect_tf).cwiseAbs().maxCoeff());
    }
    add(rep, "diffusion.sample_fit_exact_roundtrip", worst_plain, 1e-10);
    add(rep, "diffusion.sample_fit_affine_exact_roundtrip", worst_affine, 1e-10);
    add_bool(rep, "diffusion.mutated_step_breaks_roundtrip", worst_mutated > 1e-3);

    // Marginal consistency at one timestep (the heavy grid lives in the
    // acceptance suite).
    {
        int t = 100, n = 20000;
        double x0v = 0.7;
        Eigen::MatrixXd x0 = Eigen::MatrixXd::Constant(n, 1, x0v);
        Eigen::MatrixXd eps = randmat(n, 1);
        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
        double mean = x_t.mean();
        double var = (x_t.array() - mean).square().sum() / (n - 1);
        double exp_mean = s.sqrt_alpha_bar(t) * x0v;
        double exp_var = 1.0 - s.alpha_bar(t);
        double z_mean = std::abs(mean - exp_mean) / std::sqrt(exp_var / n);
        double z_var =
            std::abs(var - exp_var) / (exp_var * std::sqrt(2.0 / (n - 1)));
        add(rep, "diffusion.marginal_mean_z", z_mean, 4.0);
        add(rep, "diffusion.marginal_var_z", z_var, 4.0);
    }

    {
        Eigen::MatrixXd eps_hat = randmat(3, 4);
        double worst =
            (eps_to_score(s, 250, eps_hat) +
             eps_hat / s.sqrt_one_minus_alpha_bar(250))
                .cwiseAbs()
                .maxCoeff();
        add(rep, "diffusion.eps_to_score_formula", worst, 0.0);
    }

    // NCM: empty ramp set degenerates to the identity map; g == h always.
    {
        NcmConfig plain;
        plain.ramps.clear();
        AffineMap m = ncm_map_at(plain, 500, s.T(), rng);
        double worst = std::max(
            {(m.rotation() - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff(),
             std::abs(m.scale() - 1.0), m.offset().cwiseAbs().maxCoeff()});
        add(rep, "ncm.empty_ramps_identity", worst, 0.0);

        NcmConfig full = NcmConfig::preset("2d");
        full.mix_policy = MixPolicy::compose_all;
        Eigen::MatrixXd latent = randmat(4, 8);
        std::mt19937_64 rng2(11);
        NoisePair pair = construct_pair(latent, 700, s, full, rng2);
        double gh = (pair.g_map.rotation() - pair.h_map.rotation())
                        .cwiseAbs()
                        .maxCoeff() +
                    std::abs(pair.g_map.scale() - pair.h_map.scale()) +
                    (pair.g_map.offset() - pair.h_map.offset())
                        .cwiseAbs()
                        .maxCoeff();
        add(rep, "ncm.g_equals_h", gh, 0.0);
    }
}

void suite_gradcheck(VerifyReport& rep, std::mt19937_64& rng) {
    struct Topo {
        std::string name;
        std::vector<int> widths;
        Activation act;
        int temb;
        int cond;
    };
    // Every DenseNet shape instantiated anywhere in the project.
    std::vector<Topo> topos = {
        {"backbone_a", {2, 32, 16}, Activation::silu, 0, 0},
        {"backbone_b", {32, 32, 16}, Activation::silu, 0, 0},
        {"head", {16, 32, 3}, Activation::silu, 0, 0},
        {"projection", {16, 12, 12, 8}, Activation::silu, 0, 0},
        {"denoiser", {8, 32, 32, 8}, Activation::silu, 32, 0},
        {"score_denoiser", {1, 64, 64, 1}, Activation::silu, 64, 0},
        {"sem_embed", {2, 8}, Activation::linear, 0, 0},
        {"geo_embed", {5, 8, 8}, Activation::silu, 0, 0},
        {"fuse", {16, 8, 16}, Activation::silu, 0, 0},
        {"conditioned", {8, 16, 8}, Activation::silu, 16, 4},
    };
    std::normal_distribution<double> un(0.0, 1.0);
    for (auto& tp : topos) {
        DenseNet net = DenseNet::make(tp.widths, tp.act, tp.temb, tp.cond, rng);
        Eigen::MatrixXd x(3, tp.widths.front());
        for (int i = 0; i < x.size(); ++i) x.data()[i] = un(rng);
        Eigen::MatrixXd cond(3, tp.cond);
        for (int i = 0; i < cond.size(); ++i) cond.data()[i] = un(rng);
        std::optional<int> t;
        if (tp.temb > 0) t = 137;
        GradCheckReport rc = grad_check(net, x, t, tp.cond > 0 ? &cond : nullptr,
                                        1e-4, rng);
        add(rep, "gradcheck." + tp.name, rc.max_rel_err, 1e-4);
    }
}

void suite_sgcl(VerifyReport& rep, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> up(-1.0, 1.0);
    std::uniform_real_distribution<double> usz(0.1, 0.6);
    std::uniform_real_distribution<double> uy(-3.14159, 3.14159);
    std::uniform_int_distribution<int> unb(1, 5);

    bool assign_ok = true, mask_ok = true, fields_ok = true;
    for (int inst = 0; inst < 300; ++inst) {
        int nb = unb(rng);
        std::vector<Box> boxes(nb);
        for (auto& b : boxes) {
            b.center = Eigen::Vector2d(up(rng), up(rng));
            b.size = Eigen::Vector2d(usz(rng), usz(rng));
            b.yaw = uy(rng);
        }
        Eigen::MatrixXd pts(24, 2);
        for (int i = 0; i < pts.size(); ++i) pts.data()[i] = up(rng);

        std::vector<int> assignment = assign_box(pts, boxes);
        std::vector<int> mask = inside_mask(pts, boxes, assignment);
        Eigen::MatrixXd fields = box_fields_per_point(boxes, assignment, mask);

        for (int i = 0; i < pts.rows(); ++i) {
            int best = 0;
            double bd = 1e300;
            for (int k = 0; k < nb; ++k) {
                double d =
                    (pts.row(i).transpose() - boxes[k].center).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = k;
                }
            }
            if (best != assignment[i]) assign_ok = false;

            const Box& b = boxes[assignment[i]];
            Eigen::Rotation2D<double> rot(-b.yaw);
            Eigen::Vector2d local =
                rot.toRotationMatrix() *
                (pts.row(i).transpose() - b.center);
            bool inside = std::abs(local[0]) <= b.size[0] / 2.0 &&
                          std::abs(local[1]) <= b.size[1] / 2.0;
            if ((mask[i] == 1) != inside) mask_ok = false;

            if (mask[i] == 0 && fields.row(i).cwiseAbs().maxCoeff() != 0.0)
                fields_ok = false;
            if (mask[i] == 1) {
                Eigen::VectorXd expect(5);
                expect << b.center, b.size, b.yaw;
                if ((fields.row(i).transpose() - expect).cwiseAbs().maxCoeff() !=
                    0.0)
                    fields_ok = false;
            }
        }
    }
    add_bool(rep, "sgcl.assign_box_bruteforce", assign_ok);
    add_bool(rep, "sgcl.inside_mask_bruteforce", mask_ok);
    add_bool(rep, "sgcl.background_fields_zero_filled", fields_ok);

    // Generated scenes: every foreground label lies inside its assigned box.
    bool labels_ok = true;
    SceneConfig scfg;
    for (int i = 0; i < 10; ++i) {
        ToyScene scene = generate_scene(rng, scfg);
        std::vector<int> mask =
            inside_mask(scene.points, scene.boxes, scene.assignment);
        for (size_t p = 0; p < scene.labels.size(); ++p)
            if (scene.labels[p] == 1 && mask[p] != 1) labels_ok = false;
    }
    add_bool(rep, "scenes.fg_labels_inside_boxes", labels_ok);
}

}  // namespace

bool VerifyReport::passed() const {
    for (auto& r : results)
        if (!r.pass) return false;
    return true;
}

std::string VerifyReport::to_json() const {
    nlohmann::json j;
    j["suite"] = suite;
    j["seed"] = seed;
    j["passed"] = passed();
    j["results"] = nlohmann::json::array();
    for (auto& r : results)
        j["results"].push_back({{"name", r.name},
                                {"pass", r.pass},
                                {"measured", r.measured},
                                {"tolerance", r.tolerance}});
    return j.dump(2);
}

VerifyReport run_verify_suite(const std::string& suite, std::uint64_t seed) {
    VerifyReport rep;
    rep.suite = suite;
    rep.seed = seed;
    std::mt19937_64 rng(seed);
    if (suite == "affine" || suite == "all") suite_affine(rep, rng);
    if (suite == "diffusion" || suite == "all") suite_diffusion(rep, rng);
    if (suite == "gradcheck" || suite == "all") suite_gradcheck(rep, rng);
    if (suite == "sgcl" || suite == "all") suite_sgcl(rep, rng);
    if (rep.results.empty())
        throw std::invalid_argument("unknown verify suite '" + suite + "'");
    return rep;
}

int cmd_verify(const std::string& suite, const std::string& out_dir,
               std::optional<std::uint64_t> seed) {
    VerifyReport rep;
    try {
        rep = run_verify_suite(suite.empty() ? "all" : suite, seed.value_or(42));
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    for (auto& r : rep.results)
        std::printf("%-45s %s  (measured %.3g, tol %.3g)\n", r.name.c_str(),
                    r.pass ? "pass" : "FAIL", r.measured, r.tolerance);
    if (!out_dir.empty()) {
        fs::path p = prepare_out_dir(out_dir, "");
        write_text(p / "verify_report.json", rep.to_json() + "\n");
        write_run_manifest(p, "verify");
    }
    std::printf("%zu properties, %s\n", rep.results.size(),
                rep.passed() ? "all pass" : "FAILURES present");
    return rep.passed() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

namespace {

struct TrainFileConfig {
    TrainConfig train = TrainConfig::defaults();
    SceneConfig scene;
    int n_scenes = 80;
    bool baseline = false;
};

TrainFileConfig parse_train_config(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    TrainFileConfig cfg;
    if (j.contains("train")) cfg.train = TrainConfig::from_json(j["train"].dump());
    if (j.contains("scene")) cfg.scene = SceneConfig::from_json(j["scene"].dump());
    cfg.n_scenes = j.value("n_scenes", cfg.n_scenes);
    cfg.baseline = j.value("baseline", cfg.baseline);
    if (cfg.n_scenes < 1) throw std::invalid_argument("n_scenes must be >= 1");
    return cfg;
}

std::string train_config_to_json(const TrainFileConfig& cfg) {
    nlohmann::json j;
    j["train"] = nlohmann::json::parse(cfg.train.to_json());
    j["scene"] = nlohmann::json::parse(cfg.scene.to_json());
    j["n_scenes"] = cfg.n_scenes;
    j["baseline"] = cfg.baseline;
    return j.dump(2);
}

std::vector<ToyScene> make_scenes(const SceneConfig& cfg, int n,
                                  std::uint64_t seed) {
    std::mt19937_64 rng(seed ^ 0x7363656eULL);
    std::vector<ToyScene> scenes;
    scenes.reserve(n);
    for (int i = 0; i < n; ++i) scenes.push_back(generate_scene(rng, cfg));
    return scenes;
}

struct TrainedRun {
    DlfModel model;
    std::vector<LossRecord> log;
};

TrainedRun run_training(const TrainFileConfig& cfg) {
    std::mt19937_64 rng_init(cfg.train.seed ^ 0x696e6974ULL);
    TrainedRun run;
    run.model = make_dlf_model(cfg.train, rng_init);
    std::vector<ToyScene> scenes =
        make_scenes(cfg.scene, cfg.n_scenes, cfg.train.seed);
    Schedule s = cfg.train.make_schedule();
    run.log = train_dlf(run.model, scenes, s, cfg.train, cfg.baseline);
    return run;
}

}  // namespace

int cmd_train(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
    TrainFileConfig cfg;
    try {
        cfg = parse_train_config(read_text(config_path));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
    if (seed) cfg.train.seed = *seed;

    fs::path out = prepare_out_dir(out_dir, "train_out");
    write_text(out / "resolved_config.json", train_config_to_json(cfg) + "\n");

    TrainedRun run = run_training(cfg);

    std::ostringstream csv;
    csv << "#schema dlfkit.loss.v1\n";
    csv << "step,task_loss,diff_a,diff_b,total\n";
    for (size_t i = 0; i < run.log.size(); ++i)
        csv << i << ',' << fmt_double(run.log[i].task_loss) << ','
            << fmt_double(run.log[i].diff_a) << ','
            << fmt_double(run.log[i].diff_b) << ','
            << fmt_double(run.log[i].total) << '\n';
    write_text(out / "loss.csv", csv.str());

    std::ofstream ckpt(out / "checkpoint.bin", std::ios::binary);
    run.model.save(ckpt);
    ckpt.close();

    write_run_manifest(out, "train");
    std::printf("trained %zu steps; final task loss %.6f\n", run.log.size(),
                run.log.empty() ? 0.0 : run.log.back().task_loss);
    return 0;
}

// ---------------------------------------------------------------------------
// sweep
// ---------------------------------------------------------------------------

SweepConfig SweepConfig::defaults() {
    SweepConfig cfg;
    cfg.grid = {{CorruptionKind::gaussian, 0.05},
                {CorruptionKind::translate, 0.5},
                {CorruptionKind::scale, 0.95},
                {CorruptionKind::rotate, 0.05}};
    return cfg;
}

std::string SweepConfig::to_json() const {
    nlohmann::json j;
    j["train"] = nlohmann::json::parse(train.to_json());
    j["scene"] = nlohmann::json::parse(scene.to_json());
    j["n_train_scenes"] = n_train_scenes;
    j["n_eval_scenes"] = n_eval_scenes;
    j["seeds"] = seeds;
    j["methods"] = methods;
    j["grid"] = nlohmann::json::array();
    for (auto& g : grid)
        j["grid"].push_back(
            {{"kind", to_string(g.kind)}, {"magnitude", g.magnitude}});
    return j.dump(2);
}

SweepConfig SweepConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    SweepConfig cfg = defaults();
    if (j.contains("train")) cfg.train = TrainConfig::from_json(j["train"].dump());
    if (j.contains("scene")) cfg.scene = SceneConfig::from_json(j["scene"].dump());
    cfg.n_train_scenes = j.value("n_train_scenes", cfg.n_train_scenes);
    cfg.n_eval_scenes = j.value("n_eval_scenes", cfg.n_eval_scenes);
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("methods"))
        cfg.methods = j["methods"].get<std::vector<std::string>>();
    if (j.contains("grid")) {
        cfg.grid.clear();
        for (auto& g : j["grid"])
            cfg.grid.push_back(
                {corruption_kind_from_string(g.at("kind").get<std::string>()),
                 g.at("magnitude").get<double>()});
    }
    for (auto& m : cfg.methods)
        if (m != "dlf" && m != "baseline")
            throw std::invalid_argument("unknown method '" + m + "'");
    return cfg;
}

std::vector<SweepCell> run_sweep(const SweepConfig& cfg) {
    struct Job {
        std::string method;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto& m : cfg.methods)
        for (auto seed : cfg.seeds) jobs.push_back({m, seed});

    // One result block per job: clean first, then the grid in order.
    std::vector<std::vector<SweepCell>> blocks(jobs.size());
    std::atomic<size_t> next{0};

    auto worker = [&]() {
        for (;;) {
            size_t idx = next.fetch_add(1);
            if (idx >= jobs.size()) return;
            const Job& job = jobs[idx];

            TrainFileConfig tf;
            tf.train = cfg.train;
            tf.train.seed = job.seed;
            tf.scene = cfg.scene;
            tf.n_scenes = cfg.n_train_scenes;
            tf.baseline = job.method == "baseline";
            TrainedRun run = run_training(tf);

            std::vector<ToyScene> eval_scenes;
            {
                std::mt19937_64 rng(job.seed ^ 0x6576616cULL);
                for (int i = 0; i < cfg.n_eval_scenes; ++i)
                    eval_scenes.push_back(generate_scene(rng, cfg.scene));
            }
            Predictor pred = make_predictor(run.model);

            auto eval_one = [&](const std::optional<CorruptionSpec>& spec,
                                std::uint64_t salt) {
                std::mt19937_64 rng(job.seed ^ salt);
                return evaluate_scenes(pred, eval_scenes, spec, rng);
            };

            std::vector<SweepCell>& block = blocks[idx];
            EvalMetrics clean = eval_one(std::nullopt, 0x636c65616eULL);
            block.push_back({job.method, "clean", 0.0, job.seed, clean.fg_f1,
                             clean.center_mae});
            for (size_t g = 0; g < cfg.grid.size(); ++g) {
                EvalMetrics m = eval_one(cfg.grid[g], 0xc0ffee00ULL + g);
                block.push_back({job.method, to_string(cfg.grid[g].kind),
                                 cfg.grid[g].magnitude, job.seed, m.fg_f1,
                                 m.center_mae});
            }
        }
    };

    int n_threads = std::min<int>(thread_cap(), static_cast<int>(jobs.size()));
    if (n_threads <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n_threads; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }

    std::vector<SweepCell> cells;
    for (auto& block : blocks)
        cells.insert(cells.end(), block.begin(), block.end());
    return cells;
}

int cmd_sweep(const std::string& config_path, const std::string& out_dir,
              std::optional<std::uint64_t> seed) {
    SweepConfig cfg;
    try {
        cfg = SweepConfig::from_json(read_text(config_path));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
    if (seed)  // shift the whole seed block, preserving its size
        for (size_t i = 0; i < cfg.seeds.size(); ++i)
            cfg.seeds[i] = *seed + i;

    fs::path out = prepare_out_dir(out_dir, "sweep_out");
    write_text(out / "resolved_config.json", cfg.to_json() + "\n");

    std::ostringstream csv;
    csv << "#schema dlfkit.sweep.v1\n";
    csv << "method,corruption,magnitude,seed,fg_f1,center_mae\n";
    if (cfg.grid.empty()) {  // nothing to sweep: header-only output
        write_text(out / "metrics.csv", csv.str());
        write_run_manifest(out, "sweep");
        return 0;
    }

    std::vector<SweepCell> cells = run_sweep(cfg);

    // Data section: one row per (method, corruption, magnitude, seed). The
    // clean reference evaluations appear only as summary means below.
    for (auto& c : cells)
        if (c.corruption != "clean")
            csv << c.method << ',' << c.corruption << ','
                << fmt_double(c.magnitude) << ',' << c.seed << ','
                << fmt_double(c.fg_f1) << ',' << fmt_double(c.center_mae)
                << '\n';

    // Summary rows: per (method, corruption, magnitude) means across seeds.
    for (auto& method : cfg.methods) {
        std::vector<std::pair<std::string, double>> keys = {{"clean", 0.0}};
        for (auto& g : cfg.grid)
            keys.push_back({to_string(g.kind), g.magnitude});
        for (auto& [corr, mag] : keys) {
            double f1 = 0.0, mae = 0.0;
            long n = 0;
            for (auto& c : cells)
                if (c.method == method && c.corruption == corr &&
                    c.magnitude == mag) {
                    f1 += c.fg_f1;
                    mae += c.center_mae;
                    ++n;
                }
            if (n == 0) continue;
            csv << method << ',' << corr << ',' << fmt_double(mag) << ",mean,"
                << fmt_double(f1 / n) << ',' << fmt_double(mae / n) << '\n';
        }
    }
    write_text(out / "metrics.csv", csv.str());
    write_run_manifest(out, "sweep");
    std::printf("sweep complete: %zu cells -> %s\n", cells.size(),
                (out / "metrics.csv").string().c_str());
    return 0;
}

// ---------------------------------------------------------------------------
// demo-generate
// ---------------------------------------------------------------------------

namespace {

struct DemoConfig {
    double mu0 = 1.0;
    double sigma0 = 0.5;
    int data_n = 4096;
    int n_samples = 2000;
    int schedule_T = 1000;
    double beta_start = 1e-4;
    double beta_end = 2e-2;
    bool analytic = false;  // skip training; use the closed-form denoiser
    int hidden = 64;
    int time_embed_dim = 64;
    ScoreTrainConfig score;
};

DemoConfig parse_demo_config(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    DemoConfig cfg;
    cfg.mu0 = j.value("mu0", cfg.mu0);
    cfg.sigma0 = j.value("sigma0", cfg.sigma0);
    cfg.data_n = j.value("data_n", cfg.data_n);
    cfg.n_samples = j.value("n_samples", cfg.n_samples);
    cfg.schedule_T = j.value("schedule_T", cfg.schedule_T);
    cfg.beta_start = j.value("beta_start", cfg.beta_start);
    cfg.beta_end = j.value("beta_end", cfg.beta_end);
    cfg.analytic = j.value("analytic", cfg.analytic);
    cfg.hidden = j.value("hidden", cfg.hidden);
    cfg.time_embed_dim = j.value("time_embed_dim", cfg.time_embed_dim);
    if (j.contains("score")) {
        auto& sj = j["score"];
        cfg.score.steps = sj.value("steps", cfg.score.steps);
        cfg.score.batch = sj.value("batch", cfg.score.batch);
        cfg.score.lr = sj.value("lr", cfg.score.lr);
        cfg.score.seed = sj.value("seed", cfg.score.seed);
    }
    if (!(cfg.sigma0 > 0.0)) throw std::invalid_argument("sigma0 must be > 0");
    if (cfg.n_samples < 0) throw std::invalid_argument("n_samples must be >= 0");
    return cfg;
}

std::string demo_config_to_json(const DemoConfig& cfg) {
    nlohmann::json j;
    j["mu0"] = cfg.mu0;
    j["sigma0"] = cfg.sigma0;
    j["data_n"] = cfg.data_n;
    j["n_samples"] = cfg.n_samples;
    j["schedule_T"] = cfg.schedule_T;
    j["beta_start"] = cfg.beta_start;
    j["beta_end"] = cfg.beta_end;
    j["analytic"] = cfg.analytic;
    j["hidden"] = cfg.hidden;
    j["time_embed_dim"] = cfg.time_embed_dim;
    j["score"] = {{"steps", cfg.score.steps},
                  {"batch", cfg.score.batch},
                  {"lr", cfg.score.lr},
                  {"seed", cfg.score.seed}};
    return j.dump(2);
}

}  // namespace

int cmd_demo_generate(const std::string& config_path, const std::string& out_dir,
                      std::optional<std::uint64_t> seed) {
    DemoConfig cfg;
    try {
        cfg = parse_demo_config(read_text(config_path));
    } catch (const std::exception& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    }
    if (seed) cfg.score.seed = *seed;

    fs::path out = prepare_out_dir(out_dir, "demo_out");
    write_text(out / "resolved_config.json", demo_config_to_json(cfg) + "\n");

    Schedule s = Schedule::linear(cfg.schedule_T, cfg.beta_start, cfg.beta_end);

    EpsFn eps_fn;
    DenseNet denoiser;
    if (cfg.analytic) {
        eps_fn = [&](const Eigen::MatrixXd& x, int t) {
            return optimal_gaussian_eps(s, t, x, cfg.mu0, cfg.sigma0);
        };
    } else {
        std::mt19937_64 rng(cfg.score.seed);
        Eigen::MatrixXd data(cfg.data_n, 1);
        std::normal_distribution<double> nd(cfg.mu0, cfg.sigma0);
        for (int i = 0; i < cfg.data_n; ++i) data(i, 0) = nd(rng);
        denoiser = DenseNet::make({1, cfg.hidden, cfg.hidden, 1}, Activation::silu,
                                  cfg.time_embed_dim, 0, rng);
        std::vector<double> losses = score_ddpm_train(denoiser, data, s, cfg.score);
        std::ostringstream lcsv;
        lcsv << "#schema dlfkit.scoreloss.v1\n";
        lcsv << "step,loss\n";
        for (size_t i = 0; i < losses.size(); ++i)
            lcsv << i << ',' << fmt_double(losses[i]) << '\n';
        write_text(out / "train_loss.csv", lcsv.str());
        eps_fn = [&denoiser](const Eigen::MatrixXd& x, int t) {
            return denoiser.forward(x, t);
        };
    }

    std::ostringstream scsv, tcsv;
    scsv << "#schema dlfkit.samples.v1\n";
    scsv << "sampler,index,value\n";
    tcsv << "#schema dlfkit.trajectory.v1\n";
    tcsv << "sampler,t,mean,var\n";

    for (auto [kind, name] :
         {std::pair{SamplerKind::ancestral, "ancestral"},
          std::pair{SamplerKind::sample_fit, "sample_fit"}}) {
        std::mt19937_64 rng(cfg.score.seed ^ 0x67656eULL ^
                            static_cast<std::uint64_t>(kind));
        std::vector<TrajectoryRow> traj;
        Eigen::MatrixXd x =
            reverse_chain(eps_fn, s, cfg.n_samples, 1, kind, rng, &traj);
        for (int i = 0; i < x.rows(); ++i)
            scsv << name << ',' << i << ',' << fmt_double(x(i, 0)) << '\n';
        for (auto& row : traj)
            tcsv << name << ',' << row.t << ',' << fmt_double(row.mean) << ','
                 << fmt_double(row.var) << '\n';
        if (cfg.n_samples > 1) {
            double mean = x.mean();
            double var = (x.array() - mean).square().sum() / (x.rows() - 1);
            std::printf("%s: mean %.4f (target %.4f), var %.4f (target %.4f)\n",
                        name, mean, cfg.mu0, var, cfg.sigma0 * cfg.sigma0);
        }
    }
    write_text(out / "samples.csv", scsv.str());
    write_text(out / "trajectory.csv", tcsv.str());
    write_run_manifest(out, "demo-generate");
    return 0;
}

}  // namespace dlfkit
