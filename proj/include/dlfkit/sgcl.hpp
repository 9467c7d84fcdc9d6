#pragma once

#include <string>
#include <vector>

#include <Eigen/Dense>

#include "dlfkit/netcore.hpp"

namespace dlfkit {

/// Oriented box: center, per-axis extents, yaw about the up-axis.
/// Scenes here are planar, so dim is 2 and yaw rotates in the plane;
/// the formulas generalize unchanged to 3D.
struct Box {
    Eigen::VectorXd center;
    Eigen::VectorXd size;
    double yaw = 0.0;

    int dim() const { return static_cast<int>(center.size()); }
    /// Number of scalar fields fed to the geometric embedding: center, size, yaw.
    int field_count() const { return 2 * dim() + 1; }
    Eigen::VectorXd fields() const;
};

struct ConditionEmbedding {
    Eigen::MatrixXd e_sem;
    Eigen::MatrixXd e_geo;
    Eigen::MatrixXd fused;
};

/// Nearest box center per point; ties break toward the lowest index.
std::vector<int> assign_box(const Eigen::MatrixXd& centers,
                            const std::vector<Box>& boxes);

/// 1 iff the point, rotated into its assigned box frame, lies within
/// +-size/2 per axis.
std::vector<int> inside_mask(const Eigen::MatrixXd& centers,
                             const std::vector<Box>& boxes,
                             const std::vector<int>& assignment);

/// Per-point box-field rows; background rows (mask 0) are zero-filled.
Eigen::MatrixXd box_fields_per_point(const std::vector<Box>& boxes,
                                     const std::vector<int>& assignment,
                                     const std::vector<int>& mask);

/// F' = F + fuse(cat(sem(mask), geo(fields))). sem_net consumes a one-hot
/// {background, foreground} token, geo_net the box fields.
ConditionEmbedding embed_and_fuse(const Eigen::MatrixXd& features,
                                  const std::vector<int>& mask,
                                  const Eigen::MatrixXd& box_fields,
                                  const DenseNet& sem_net, const DenseNet& geo_net,
                                  const DenseNet& fuse_net, Tape* sem_tape = nullptr,
                                  Tape* geo_tape = nullptr, Tape* fuse_tape = nullptr);

std::string box_to_json(const Box& b);
Box box_from_json(const std::string& text);

}  // namespace dlfkit
