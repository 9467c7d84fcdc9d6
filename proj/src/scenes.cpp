#include "dlfkit/scenes.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

namespace {

bool boxes_overlap(const Box& a, const Box& b) {
    // Conservative circumscribed-circle test; keeps placement simple and
    // guarantees disjoint interiors.
    double ra = a.size.norm() / 2.0, rb = b.size.norm() / 2.0;
    return (a.center - b.center).norm() < ra + rb;
}

Eigen::Vector2d sample_in_box(const Box& b, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    double lx = u(rng) * b.size[0];
    double ly = u(rng) * b.size[1];
    double c = std::cos(b.yaw), s = std::sin(b.yaw);
    return b.center + Eigen::Vector2d(c * lx - s * ly, s * lx + c * ly);
}

}  // namespace

std::string SceneConfig::to_json() const {
    nlohmann::json j;
    j["n_points"] = n_points;
    j["n_boxes"] = n_boxes;
    j["fg_fraction"] = fg_fraction;
    j["size_min"] = size_min;
    j["size_max"] = size_max;
    j["yaw_min"] = yaw_min;
    j["yaw_max"] = yaw_max;
    j["center_extent"] = center_extent;
    return j.dump();
}

SceneConfig SceneConfig::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    SceneConfig cfg;
    cfg.n_points = j.value("n_points", cfg.n_points);
    cfg.n_boxes = j.value("n_boxes", cfg.n_boxes);
    cfg.fg_fraction = j.value("fg_fraction", cfg.fg_fraction);
    cfg.size_min = j.value("size_min", cfg.size_min);
    cfg.size_max = j.value("size_max", cfg.size_max);
    cfg.yaw_min = j.value("yaw_min", cfg.yaw_min);
    cfg.yaw_max = j.value("yaw_max", cfg.yaw_max);
    cfg.center_extent = j.value("center_extent", cfg.center_extent);
    return cfg;
}

ToyScene generate_scene(std::mt19937_64& rng, const SceneConfig& cfg) {
    if (cfg.n_points < 0 || cfg.n_boxes < 0 || cfg.fg_fraction < 0.0 ||
        cfg.fg_fraction > 1.0 || !(cfg.size_min > 0.0) || cfg.size_min > cfg.size_max)
        throw std::invalid_argument("generate_scene: invalid config");

    std::uniform_real_distribution<double> uc(-cfg.center_extent, cfg.center_extent);
    std::uniform_real_distribution<double> us(cfg.size_min, cfg.size_max);
    std::uniform_real_distribution<double> uy(cfg.yaw_min, cfg.yaw_max);
    std::uniform_real_distribution<double> up(-1.0, 1.0);

    ToyScene scene;
    int rejections = 0;
    while (static_cast<int>(scene.boxes.size()) < cfg.n_boxes) {
        Box b;
        b.center = Eigen::Vector2d(uc(rng), uc(rng));
        b.size = Eigen::Vector2d(us(rng), us(rng));
        b.yaw = uy(rng);
        bool ok = true;
        for (auto& other : scene.boxes)
            if (boxes_overlap(b, other)) ok = false;
        if (ok) {
            scene.boxes.push_back(std::move(b));
        } else if (++rejections > cfg.max_rejections) {
            throw std::runtime_error("generate_scene: box placement failed after " +
                                     std::to_string(cfg.max_rejections) + " rejections");
        }
    }

    int n_fg = scene.boxes.empty()
                   ? 0
                   : static_cast<int>(std::lround(cfg.fg_fraction * cfg.n_points));
    scene.points.resize(cfg.n_points, 2);
    scene.labels.assign(cfg.n_points, 0);

    std::uniform_int_distribution<size_t> pick_box(
        0, scene.boxes.empty() ? 0 : scene.boxes.size() - 1);
    for (int i = 0; i < cfg.n_points; ++i) {
        if (i < n_fg) {
            size_t bi = pick_box(rng);
            const Box& b = scene.boxes[bi];
            // Resample until the containing box is also the nearest-center
            // box, so labels stay consistent with the nearest-box assignment.
            for (int attempt = 0;; ++attempt) {
                Eigen::Vector2d p = sample_in_box(b, rng);
                bool nearest = true;
                double d_own = (p - Eigen::Vector2d(b.center)).squaredNorm();
                for (size_t k = 0; k < scene.boxes.size(); ++k)
                    if (k != bi &&
                        (p - Eigen::Vector2d(scene.boxes[k].center)).squaredNorm() <
                            d_own)
                        nearest = false;
                if (nearest) {
                    scene.points.row(i) = p.transpose();
                    break;
                }
                if (attempt > cfg.max_rejections)
                    throw std::runtime_error(
                        "generate_scene: foreground rejection failed");
            }
            scene.labels[i] = 1;
        } else {
            // Background: uniform in the scene, rejected from box interiors.
            for (int attempt = 0;; ++attempt) {
                Eigen::Vector2d p(up(rng), up(rng));
                bool inside_any = false;
                for (auto& b : scene.boxes) {
                    Eigen::Vector2d rel = p - Eigen::Vector2d(b.center);
                    double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
                    Eigen::Vector2d local(c * rel[0] - s * rel[1],
                                          s * rel[0] + c * rel[1]);
                    if (std::abs(local[0]) <= b.size[0] / 2.0 &&
                        std::abs(local[1]) <= b.size[1] / 2.0)
                        inside_any = true;
                }
                if (!inside_any) {
                    scene.points.row(i) = p.transpose();
                    break;
                }
                if (attempt > cfg.max_rejections)
                    throw std::runtime_error("generate_scene: background rejection failed");
            }
        }
    }

    if (!scene.boxes.empty()) scene.assignment = assign_box(scene.points, scene.boxes);
    return scene;
}

const char* to_string(CorruptionKind k) {
    switch (k) {
        case CorruptionKind::gaussian: return "gaussian";
        case CorruptionKind::translate: return "translate";
        case CorruptionKind::scale: return "scale";
        case CorruptionKind::rotate: return "rotate";
    }
    return "?";
}

CorruptionKind corruption_kind_from_string(const std::string& s) {
    if (s == "gaussian") return CorruptionKind::gaussian;
    if (s == "translate") return CorruptionKind::translate;
    if (s == "scale") return CorruptionKind::scale;
    if (s == "rotate") return CorruptionKind::rotate;
    throw std::invalid_argument("unknown corruption kind '" + s + "'");
}

Eigen::MatrixXd corrupt(const Eigen::MatrixXd& points, const CorruptionSpec& spec,
                        std::mt19937_64& rng) {
    switch (spec.kind) {
        case CorruptionKind::gaussian: {
            if (spec.magnitude < 0.0)
                throw std::invalid_argument("corrupt: tau must be >= 0");
            if (spec.magnitude == 0.0) return points;
            std::normal_distribution<double> dist(0.0, std::sqrt(spec.magnitude));
            Eigen::MatrixXd out = points;
            for (Eigen::Index i = 0; i < out.size(); ++i) out.data()[i] += dist(rng);
            return out;
        }
        case CorruptionKind::translate:
            return points.array() - spec.magnitude;
        case CorruptionKind::scale:
            if (!(spec.magnitude > 0.0))
                throw std::invalid_argument("corrupt: scale must be > 0");
            return spec.magnitude * points;
        case CorruptionKind::rotate: {
            double c = std::cos(spec.magnitude), s = std::sin(spec.magnitude);
            Eigen::Matrix2d R;
            R << c, -s, s, c;
            return points * R.transpose();
        }
    }
    throw std::logic_error("corrupt: unknown kind");
}

EvalMetrics evaluate_scenes(const Predictor& predict,
                            const std::vector<ToyScene>& scenes,
                            const std::optional<CorruptionSpec>& spec,
                            std::mt19937_64& rng) {
    EvalMetrics metrics;
    long tp = 0, fp = 0, fn = 0;
    double mae_sum = 0.0;
    long mae_count = 0;

    for (auto& scene : scenes) {
        Eigen::MatrixXd input =
            spec ? corrupt(scene.points, *spec, rng) : scene.points;
        Prediction pred = predict(input);

        long s_tp = 0, s_fp = 0, s_fn = 0;
        double s_mae = 0.0;
        long s_cnt = 0;
        for (Eigen::Index i = 0; i < scene.points.rows(); ++i) {
            bool predicted = pred.fg_prob[i] > 0.5;
            bool truth = scene.labels[i] == 1;
            if (predicted && truth) ++s_tp;
            if (predicted && !truth) ++s_fp;
            if (!predicted && truth) ++s_fn;
            if (truth && !scene.boxes.empty()) {
                Eigen::VectorXd gt_offset =
                    scene.boxes[scene.assignment[i]].center -
                    scene.points.row(i).transpose();
                s_mae += (pred.offsets.row(i).transpose() - gt_offset)
                             .cwiseAbs()
                             .mean();
                ++s_cnt;
            }
        }
        SceneMetrics sm;
        sm.fg_f1 = (2 * s_tp > 0 || s_fp + s_fn > 0)
                       ? 2.0 * s_tp / static_cast<double>(2 * s_tp + s_fp + s_fn)
                       : 1.0;
        sm.center_mae = s_cnt > 0 ? s_mae / s_cnt : 0.0;
        metrics.per_scene.push_back(sm);

        tp += s_tp;
        fp += s_fp;
        fn += s_fn;
        mae_sum += s_mae;
        mae_count += s_cnt;
    }

    metrics.fg_f1 = (2 * tp + fp + fn) > 0
                        ? 2.0 * tp / static_cast<double>(2 * tp + fp + fn)
                        : 1.0;
    metrics.center_mae = mae_count > 0 ? mae_sum / mae_count : 0.0;
    return metrics;
}

std::string ToyScene::to_json() const {
    nlohmann::json j;
    j["points"] = nlohmann::json::array();
    for (Eigen::Index i = 0; i < points.rows(); ++i)
        j["points"].push_back({points(i, 0), points(i, 1)});
    j["labels"] = labels;
    j["boxes"] = nlohmann::json::array();
    for (auto& b : boxes) j["boxes"].push_back(nlohmann::json::parse(box_to_json(b)));
    j["assignment"] = assignment;
    return j.dump();
}

ToyScene ToyScene::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    ToyScene scene;
    auto& pts = j.at("points");
    scene.points.resize(pts.size(), 2);
    for (size_t i = 0; i < pts.size(); ++i) {
        scene.points(i, 0) = pts[i][0].get<double>();
        scene.points(i, 1) = pts[i][1].get<double>();
    }
    scene.labels = j.at("labels").get<std::vector<int>>();
    for (auto& bj : j.at("boxes")) scene.boxes.push_back(box_from_json(bj.dump()));
    scene.assignment = j.value("assignment", std::vector<int>{});
    return scene;
}

}  // namespace dlfkit
