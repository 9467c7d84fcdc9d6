// Acceptance gate: one pass/fail line per criterion. Run with a criterion
// number (1-9) or no arguments for the full battery. All tolerances are
// pinned here.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "dlfkit/dlf.hpp"
#include "dlfkit/experiment.hpp"
#include "dlfkit/sgcl.hpp"

using namespace dlfkit;

namespace {

std::filesystem::path out_dir() {
    std::filesystem::path p = "acceptance_out";
    std::filesystem::create_directories(p);
    return p;
}

Eigen::MatrixXd randmat(std::mt19937_64& rng, int n, int d) {
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd m(n, d);
    for (int i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
    return m;
}

AffineMap random_map(std::mt19937_64& rng, int dim) {
    std::uniform_real_distribution<double> ua(-3.14, 3.14);
    std::uniform_real_distribution<double> us(0.2, 3.0);
    std::vector<std::pair<int, int>> pairs;
    std::vector<double> angles;
    for (int i = 0; i + 1 < dim; i += 2) {
        pairs.push_back({i, i + 1});
        angles.push_back(ua(rng));
    }
    return AffineMap(AffineMap::givens(pairs, angles, dim).rotation(), us(rng),
                     randmat(rng, dim, 1).col(0));
}

// ---- criterion 1: derivation suite -------------------------------------

bool criterion1() {
    std::mt19937_64 rng(101);
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);

    double brute = 1.0;
    for (int t = 1; t <= 1000; ++t) brute *= 1.0 - s.beta(t);
    double alpha_gap = std::abs(s.alpha_bar(1000) - brute);
    double alpha_ref = std::abs(s.alpha_bar(1000) - 4.0358297653756754e-05);

    const int dim = 8;
    double worst_rt = 0.0, worst_affine = 0.0, worst_orth = 0.0, worst_inv = 0.0;
    for (int it = 0; it < 10000; ++it) {
        int t = sample_timestep(rng, s.T());
        Eigen::MatrixXd x0 = randmat(rng, 2, dim), eps = randmat(rng, 2, dim),
                        eps2 = randmat(rng, 2, dim);

        Eigen::MatrixXd x_t = noise_forward(s, t, x0, eps);
        Eigen::MatrixXd expect = s.sqrt_alpha_bar(t - 1) * x0 +
                                 std::sqrt(1.0 - s.alpha_bar(t - 1)) * eps2;
        worst_rt = std::max(worst_rt, (sample_fit_step(s, t, x_t, eps, eps2) -
                                       expect)
                                          .cwiseAbs()
                                          .maxCoeff());

        AffineMap g_t = random_map(rng, dim), g_prev = random_map(rng, dim);
        AffineMap h_t = random_map(rng, dim), h_prev = random_map(rng, dim);
        worst_orth = std::max(
            worst_orth, (g_t.rotation().transpose() * g_t.rotation() -
                         Eigen::MatrixXd::Identity(dim, dim))
                            .cwiseAbs()
                            .maxCoeff());
        Eigen::VectorXd v = x0.row(0).transpose();
        worst_inv = std::max(worst_inv, (g_t.inverse().apply(g_t.apply(v)) - v)
                                            .cwiseAbs()
                                            .maxCoeff());

        NoisePair pair = noise_forward_affine(s, t, x0, eps, g_t, h_t);
        Eigen::MatrixXd expect_tf =
            s.sqrt_alpha_bar(t - 1) * g_prev.apply_rows(x0) +
            std::sqrt(1.0 - s.alpha_bar(t - 1)) * h_prev.apply_rows(eps2);
        worst_affine = std::max(
            worst_affine, (sample_fit_step_affine(s, t, pair.noisy, eps, eps2,
                                                  g_t, g_prev, h_t, h_prev) -
                           expect_tf)
                              .cwiseAbs()
                              .maxCoeff());
    }

    bool pass = worst_rt <= 1e-10 && worst_affine <= 1e-10 &&
                worst_orth < 1e-12 && worst_inv < 1e-10 && alpha_gap <= 1e-12 &&
                alpha_ref <= 1e-12;
    std::printf(
        "criterion 1: %s - derivation suite (roundtrip %.2e, affine %.2e, "
        "orth %.2e, invert %.2e, alpha_bar gap %.2e)\n",
        pass ? "PASS" : "FAIL", worst_rt, worst_affine, worst_orth, worst_inv,
        std::max(alpha_gap, alpha_ref));
    return pass;
}

// ---- criterion 2: marginal consistency ----------------------------------

bool criterion2() {
    std::mt19937_64 rng(202);
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    const int n = 100000;
    const double x0 = 0.8;
    std::normal_distribution<double> nd(0.0, 1.0);

    bool pass = true;
    std::string detail;
    Eigen::VectorXd x = Eigen::VectorXd::Constant(n, x0);
    int reached = 0;
    for (int t : {10, 100, 500, 1000}) {
        for (int k = reached + 1; k <= t; ++k) {
            double a = std::sqrt(s.alpha(k)), b = std::sqrt(s.beta(k));
            for (int i = 0; i < n; ++i) x[i] = a * x[i] + b * nd(rng);
        }
        reached = t;

        double mean = x.mean();
        double var = (x.array() - mean).square().sum() / (n - 1);
        double em = s.sqrt_alpha_bar(t) * x0;
        double ev = 1.0 - s.alpha_bar(t);
        double z_mean = std::abs(mean - em) / std::sqrt(ev / n);
        double z_var = std::abs(var - ev) / (ev * std::sqrt(2.0 / (n - 1)));
        if (z_mean > 3.0 || z_var > 3.0) pass = false;
        char buf[64];
        std::snprintf(buf, sizeof(buf), " t=%d z=(%.2f,%.2f)", t, z_mean, z_var);
        detail += buf;
    }
    std::printf("criterion 2: %s - marginal consistency (3-sigma, 1e5 trials)%s\n",
                pass ? "PASS" : "FAIL", detail.c_str());
    return pass;
}

// ---- criterion 3: score check -------------------------------------------

bool criterion3() {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    const double mu0 = 1.0, s0 = 0.5;

    std::mt19937_64 rng(303);
    Eigen::MatrixXd data(8192, 1);
    std::normal_distribution<double> nd(mu0, s0);
    for (int i = 0; i < data.rows(); ++i) data(i, 0) = nd(rng);

    DenseNet den = DenseNet::make({1, 64, 64, 1}, Activation::silu, 64, 0, rng);
    ScoreTrainConfig cfg;
    cfg.steps = 25000;
    cfg.batch = 512;
    cfg.lr = 2e-3;
    cfg.seed = 303;
    score_ddpm_train(den, data, s, cfg);

    bool pass = true;
    std::string detail;
    for (int t : {100, 500, 900}) {
        double ab = s.alpha_bar(t);
        double m = std::sqrt(ab) * mu0;
        double v = ab * s0 * s0 + 1.0 - ab;
        double sd = std::sqrt(v);

        // Relative error aggregated over the central +-2 sigma band; the
        // pointwise ratio is ill-posed where the score crosses zero.
        double num = 0.0, denom = 0.0;
        const int grid = 201;
        for (int i = 0; i < grid; ++i) {
            double xv = m - 2 * sd + 4 * sd * i / (grid - 1);
            Eigen::MatrixXd xm = Eigen::MatrixXd::Constant(1, 1, xv);
            double pred = eps_to_score(s, t, den.forward(xm, t))(0, 0);
            double truth = -(xv - m) / v;
            num += std::abs(pred - truth);
            denom += std::abs(truth);
        }
        double rel = num / denom;
        if (rel > 0.05) pass = false;
        char buf[48];
        std::snprintf(buf, sizeof(buf), " t=%d rel=%.3f", t, rel);
        detail += buf;
    }
    std::printf("criterion 3: %s - trained score vs analytic marginal (<=5%%)%s\n",
                pass ? "PASS" : "FAIL", detail.c_str());
    return pass;
}

// ---- criterion 4: sampler agreement --------------------------------------

bool criterion4() {
    Schedule s = Schedule::linear(1000, 1e-4, 2e-2);
    const double mu0 = 1.0, s0 = 0.5;
    const int n = 100000;

    std::mt19937_64 rng(404);
    std::normal_distribution<double> nd(mu0, s0);
    Eigen::MatrixXd x0(n, 1);
    for (int i = 0; i < n; ++i) x0(i, 0) = nd(rng);

    // Perfect denoiser: per chain it knows the exact noise content of x_t
    // relative to that chain's ground-truth sample.
    EpsFn exact = [&](const Eigen::MatrixXd& x, int t) {
        return ((x - s.sqrt_alpha_bar(t) * x0) / s.sqrt_one_minus_alpha_bar(t))
            .eval();
    };

    auto moments = [&](const Eigen::MatrixXd& x) {
        double mean = x.mean();
        double var = (x.array() - mean).square().sum() / (x.rows() - 1);
        return std::pair{mean, var};
    };

    std::mt19937_64 ra(1404), rb(2404);
    auto [ma, va] = moments(reverse_chain(exact, s, n, 1, SamplerKind::ancestral, ra));
    auto [mf, vf] = moments(reverse_chain(exact, s, n, 1, SamplerKind::sample_fit, rb));

    double se_m = s0 / std::sqrt(double(n));
    double se_v = s0 * s0 * std::sqrt(2.0 / (n - 1));
    bool pass = std::abs(ma - mu0) < 3 * se_m && std::abs(mf - mu0) < 3 * se_m &&
                std::abs(va - s0 * s0) < 3 * se_v &&
                std::abs(vf - s0 * s0) < 3 * se_v &&
                std::abs(ma - mf) < 3 * se_m * std::sqrt(2.0) &&
                std::abs(va - vf) < 3 * se_v * std::sqrt(2.0);
    std::printf(
        "criterion 4: %s - sampler agreement over 1e5 chains "
        "(ancestral m=%.4f v=%.4f, sample-fit m=%.4f v=%.4f)\n",
        pass ? "PASS" : "FAIL", ma, va, mf, vf);
    return pass;
}

// ---- criterion 5: gradient correctness -----------------------------------

bool criterion5() {
    VerifyReport rep = run_verify_suite("gradcheck", 505);
    bool pass = rep.passed();
    double worst = 0.0;
    for (auto& r : rep.results) worst = std::max(worst, r.measured);
    std::printf(
        "criterion 5: %s - grad_check at 1e-4 on %zu topologies (worst %.2e)\n",
        pass ? "PASS" : "FAIL", rep.results.size(), worst);
    return pass;
}

// ---- criterion 6: detachment ----------------------------------------------

bool criterion6() {
    TrainConfig cfg = TrainConfig::defaults();
    cfg.epochs = 5;
    cfg.batch = 2;
    cfg.hidden = 16;
    cfg.latent_dim = 8;
    cfg.ncm_dim = 4;
    cfg.time_embed_dim = 8;
    cfg.sgcl_embed_dim = 4;
    cfg.schedule_T = 100;
    cfg.ramps = {{PerturbKind::translation, 0.0, 0.5, {}}};
    cfg.seed = 6;

    SceneConfig scfg;
    scfg.n_points = 48;
    std::mt19937_64 srng(606);
    std::vector<ToyScene> scenes;
    for (int i = 0; i < 8; ++i) scenes.push_back(generate_scene(srng, scfg));
    Schedule s = cfg.make_schedule();

    // (a) infer is bit-identical after randomizing the auxiliary branch.
    std::mt19937_64 mrng(607);
    DlfModel m = make_dlf_model(cfg, mrng);
    train_dlf(m, scenes, s, cfg, false);
    Prediction before = infer(m, scenes[0].points);
    std::normal_distribution<double> big(0.0, 50.0);
    for (DenseNet* net : {&m.proj_a, &m.proj_b, &m.denoiser_a, &m.denoiser_b}) {
        Eigen::VectorXd p = net->flatten_params();
        for (int i = 0; i < p.size(); ++i) p[i] = big(mrng);
        net->unflatten_params(p);
    }
    Prediction after = infer(m, scenes[0].points);
    bool detach_ok =
        (before.fg_prob - after.fg_prob).cwiseAbs().maxCoeff() == 0.0 &&
        (before.offsets - after.offsets).cwiseAbs().maxCoeff() == 0.0;

    // (b) lambda = 0 equals the baseline task-loss trajectory bit for bit.
    TrainConfig zero = cfg;
    zero.lambda_a = 0.0;
    zero.lambda_b = 0.0;
    std::mt19937_64 ra(608), rb(608);
    DlfModel mz = make_dlf_model(zero, ra);
    DlfModel mb = make_dlf_model(zero, rb);
    auto lz = train_dlf(mz, scenes, s, zero, false);
    auto lb = train_dlf(mb, scenes, s, zero, true);
    bool traj_ok = lz.size() == lb.size();
    for (size_t i = 0; traj_ok && i < lz.size(); ++i)
        traj_ok = lz[i].task_loss == lb[i].task_loss;

    bool pass = detach_ok && traj_ok;
    std::printf(
        "criterion 6: %s - detachment (infer bit-identical: %s, lambda=0 == "
        "baseline trajectory: %s)\n",
        pass ? "PASS" : "FAIL", detach_ok ? "yes" : "no", traj_ok ? "yes" : "no");
    return pass;
}

// ---- criterion 7: robustness direction ------------------------------------

SweepConfig robustness_config() {
    SweepConfig cfg = SweepConfig::defaults();
    cfg.train = TrainConfig::defaults();
    cfg.train.sgcl_enabled = false;
    cfg.train.epochs = 60;
    cfg.train.hidden = 32;
    cfg.train.latent_dim = 16;
    cfg.train.ncm_dim = 8;
    cfg.train.time_embed_dim = 16;
    cfg.train.lambda_a = 0.5;
    cfg.train.lambda_b = 0.5;
    cfg.train.ramps = {{PerturbKind::translation, 0.0, 1.0, {}},
                       {PerturbKind::scaling, 1.0, 2.0, {}},
                       {PerturbKind::rotation, 0.0, 1.5707963, {{0, 1}, {2, 3}}}};
    cfg.n_train_scenes = 60;
    cfg.n_eval_scenes = 40;
    cfg.seeds = {1, 2, 3, 4, 5};
    cfg.grid = {{CorruptionKind::gaussian, 0.05},
                {CorruptionKind::translate, 0.5},
                {CorruptionKind::scale, 0.95},
                {CorruptionKind::rotate, 0.05}};
    return cfg;
}

bool criterion7() {
    SweepConfig cfg = robustness_config();
    std::vector<SweepCell> cells = run_sweep(cfg);

    // Seed-mean degradation (clean f1 minus corrupted f1) per method/kind.
    std::map<std::pair<std::string, std::string>, double> degradation;
    for (auto& method : cfg.methods) {
        std::map<std::uint64_t, double> clean;
        for (auto& c : cells)
            if (c.method == method && c.corruption == "clean")
                clean[c.seed] = c.fg_f1;
        for (auto& c : cells)
            if (c.method == method && c.corruption != "clean")
                degradation[{method, c.corruption}] +=
                    (clean[c.seed] - c.fg_f1) / double(cfg.seeds.size());
    }

    std::ofstream csv(out_dir() / "robustness.csv");
    csv << "#schema dlfkit.sweep.v1\n";
    csv << "method,corruption,magnitude,seed,fg_f1,center_mae\n";
    for (auto& c : cells)
        csv << c.method << ',' << c.corruption << ',' << c.magnitude << ','
            << c.seed << ',' << c.fg_f1 << ',' << c.center_mae << '\n';

    int wins = 0;
    bool gaussian_win = false;
    std::string detail;
    for (auto kind : {"gaussian", "translate", "scale", "rotate"}) {
        double dlf = degradation[{"dlf", kind}];
        double base = degradation[{"baseline", kind}];
        bool win = dlf < base;
        wins += win ? 1 : 0;
        if (std::string(kind) == "gaussian") gaussian_win = win;
        char buf[96];
        std::snprintf(buf, sizeof(buf), " %s dlf=%.4f base=%.4f%s", kind, dlf,
                      base, win ? "*" : "");
        detail += buf;
    }
    bool pass = wins >= 3 && gaussian_win;
    std::printf(
        "criterion 7: %s - robustness direction over 5 seeds (%d/4 kinds)%s\n",
        pass ? "PASS" : "FAIL", wins, detail.c_str());
    return pass;
}

// ---- criterion 8: ablation executability -----------------------------------

bool criterion8() {
    // (a) every target kind x time mode x NCM flag trains to completion.
    bool grid_ok = true;
    std::ofstream grid_csv(out_dir() / "ablation_grid.csv");
    grid_csv << "#schema dlfkit.ablation.v1\n";
    grid_csv << "target_kind,time_mode,ncm,final_task_loss,final_total\n";
    SceneConfig scfg;
    scfg.n_points = 48;
    std::mt19937_64 srng(808);
    std::vector<ToyScene> scenes;
    for (int i = 0; i < 8; ++i) scenes.push_back(generate_scene(srng, scfg));

    for (auto tk : {TargetKind::h_eps, TargetKind::eps, TargetKind::x0,
                    TargetKind::g_x0})
        for (auto tm : {TimeMode::t_minus, TimeMode::t_plus, TimeMode::t_star})
            for (bool ncm : {false, true}) {
                TrainConfig cfg = TrainConfig::defaults();
                cfg.epochs = 2;
                cfg.batch = 2;
                cfg.hidden = 12;
                cfg.latent_dim = 8;
                cfg.ncm_dim = 4;
                cfg.time_embed_dim = 8;
                cfg.sgcl_embed_dim = 4;
                cfg.schedule_T = 100;
                cfg.target_kind = tk;
                cfg.time_mode = tm;
                cfg.ncm_enabled = ncm;
                cfg.ramps = {{PerturbKind::translation, 0.0, 0.5, {}},
                             {PerturbKind::scaling, 1.0, 1.5, {}},
                             {PerturbKind::rotation, 0.0, 0.5, {{0, 1}, {2, 3}}}};
                std::mt19937_64 rng(809);
                DlfModel m = make_dlf_model(cfg, rng);
                Schedule s = cfg.make_schedule();
                auto log = train_dlf(m, scenes, s, cfg, false);
                bool ok = !log.empty() && std::isfinite(log.back().total);
                grid_ok = grid_ok && ok;
                grid_csv << to_string(tk) << ',' << to_string(tm) << ','
                         << (ncm ? 1 : 0) << ',' << log.back().task_loss << ','
                         << log.back().total << '\n';
            }

    // (b) lambda sweep: the largest lambda underperforms lambda = 0.1.
    std::vector<double> lambdas = {0.01, 0.05, 0.1, 0.5, 1.0, 5.0};
    std::map<double, double> mean_f1;
    std::ofstream lam_csv(out_dir() / "lambda_sweep.csv");
    lam_csv << "#schema dlfkit.lambda.v1\n";
    lam_csv << "lambda,seed,fg_f1,center_mae\n";

    for (double lam : lambdas) {
        SweepConfig cfg = robustness_config();
        cfg.train.epochs = 20;
        cfg.n_train_scenes = 40;
        cfg.n_eval_scenes = 24;
        cfg.train.lambda_a = lam;
        cfg.train.lambda_b = lam;
        cfg.methods = {"dlf"};
        cfg.grid.clear();  // clean evaluation only
        std::vector<SweepCell> cells = run_sweep(cfg);
        for (auto& c : cells) {
            lam_csv << lam << ',' << c.seed << ',' << c.fg_f1 << ','
                    << c.center_mae << '\n';
            mean_f1[lam] += c.fg_f1 / double(cfg.seeds.size());
        }
    }
    bool lambda_ok = mean_f1[5.0] < mean_f1[0.1];

    bool pass = grid_ok && lambda_ok;
    std::printf(
        "criterion 8: %s - ablations executable (grid 24/24: %s; f1 at "
        "lambda=5.0 %.4f < lambda=0.1 %.4f: %s)\n",
        pass ? "PASS" : "FAIL", grid_ok ? "yes" : "no", mean_f1[5.0],
        mean_f1[0.1], lambda_ok ? "yes" : "no");
    return pass;
}

// ---- criterion 9: SGCL oracle equivalence -----------------------------------

bool criterion9() {
    std::mt19937_64 rng(909);
    std::uniform_real_distribution<double> up(-1.0, 1.0);
    std::uniform_real_distribution<double> usz(0.05, 0.8);
    std::uniform_real_distribution<double> uy(-3.2, 3.2);
    std::uniform_int_distribution<int> unb(1, 8);

    long mismatches = 0;
    for (int inst = 0; inst < 1000; ++inst) {
        int nb = unb(rng);
        std::vector<Box> boxes(nb);
        for (auto& b : boxes) {
            b.center = Eigen::Vector2d(up(rng), up(rng));
            b.size = Eigen::Vector2d(usz(rng), usz(rng));
            b.yaw = uy(rng);
        }
        Eigen::MatrixXd pts(32, 2);
        for (int i = 0; i < pts.size(); ++i) pts.data()[i] = up(rng);

        auto assignment = assign_box(pts, boxes);
        auto mask = inside_mask(pts, boxes, assignment);
        for (int i = 0; i < pts.rows(); ++i) {
            int best = 0;
            double bd = 1e300;
            for (int k = 0; k < nb; ++k) {
                double d = (pts.row(i).transpose() - boxes[k].center).squaredNorm();
                if (d < bd) {
                    bd = d;
                    best = k;
                }
            }
            if (assignment[i] != best) ++mismatches;

            const Box& b = boxes[assignment[i]];
            double c = std::cos(-b.yaw), sn = std::sin(-b.yaw);
            double rx = pts(i, 0) - b.center[0], ry = pts(i, 1) - b.center[1];
            bool inside = std::abs(c * rx - sn * ry) <= b.size[0] / 2 &&
                          std::abs(sn * rx + c * ry) <= b.size[1] / 2;
            if (mask[i] != (inside ? 1 : 0)) ++mismatches;
        }
    }
    bool pass = mismatches == 0;
    std::printf(
        "criterion 9: %s - assign_box/inside_mask brute-force match on 1e3 "
        "instances (%ld mismatches)\n",
        pass ? "PASS" : "FAIL", mismatches);
    return pass;
}

}  // namespace

int main(int argc, char** argv) {
    bool (*criteria[])() = {criterion1, criterion2, criterion3,
                            criterion4, criterion5, criterion6,
                            criterion7, criterion8, criterion9};
    bool all = true;
    if (argc > 1) {
        for (int i = 1; i < argc; ++i) {
            int k = std::atoi(argv[i]);
            if (k < 1 || k > 9) {
                std::fprintf(stderr, "unknown criterion '%s'\n", argv[i]);
                return 2;
            }
            all = criteria[k - 1]() && all;
        }
    } else {
        for (auto* fn : criteria) all = fn() && all;
    }
    return all ? 0 : 1;
}
