#pragma once

#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlfkit/sgcl.hpp"

namespace dlfkit {

struct SceneConfig {
    int n_points = 128;
    int n_boxes = 3;
    double fg_fraction = 0.5;
    double size_min = 0.25;
    double size_max = 0.5;
    double yaw_min = -3.14159265358979323846;
    double yaw_max = 3.14159265358979323846;
    double center_extent = 0.6;  // box centers sampled in [-extent, extent]^2
    int max_rejections = 10000;

    std::string to_json() const;
    static SceneConfig from_json(const std::string& text);
};

/// Synthetic planar point scene with oriented ground-truth boxes.
/// Foreground points are sampled inside boxes; labels are consistent with
/// inside_mask by construction.
struct ToyScene {
    Eigen::MatrixXd points;       // n x 2, in [-1,1]^2
    std::vector<int> labels;      // 1 = foreground
    std::vector<Box> boxes;
    std::vector<int> assignment;  // nearest box per point (valid when boxes nonempty)

    std::string to_json() const;
    static ToyScene from_json(const std::string& text);
};

enum class CorruptionKind { gaussian, translate, scale, rotate };

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::gaussian;
    double magnitude = 0.0;  // tau / T / S / rotation angle in radians
};

const char* to_string(CorruptionKind k);
CorruptionKind corruption_kind_from_string(const std::string& s);

ToyScene generate_scene(std::mt19937_64& rng, const SceneConfig& cfg);

/// Applies a corruption to model input points only; labels and boxes are
/// never touched.
Eigen::MatrixXd corrupt(const Eigen::MatrixXd& points, const CorruptionSpec& spec,
                        std::mt19937_64& rng);

struct Prediction {
    Eigen::VectorXd fg_prob;   // per point
    Eigen::MatrixXd offsets;   // predicted offset to assigned box center
};

using Predictor = std::function<Prediction(const Eigen::MatrixXd& points)>;

struct SceneMetrics {
    double fg_f1 = 0.0;
    double center_mae = 0.0;
};

struct EvalMetrics {
    double fg_f1 = 0.0;
    double center_mae = 0.0;
    std::vector<SceneMetrics> per_scene;
};

/// Foreground F1 at threshold 0.5 plus mean absolute error of predicted
/// box-center offsets over true foreground points. F1 is computed over the
/// pooled confusion counts of all scenes.
EvalMetrics evaluate_scenes(const Predictor& predict,
                            const std::vector<ToyScene>& scenes,
                            const std::optional<CorruptionSpec>& spec,
                            std::mt19937_64& rng);

}  // namespace dlfkit
