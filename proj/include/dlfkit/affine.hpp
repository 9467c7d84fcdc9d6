#pragma once

#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace dlfkit {

/// Invertible affine map x -> R * S * (x - T) with orthogonal R, scalar S > 0.
/// Rows of a matrix argument are treated as individual vectors.
class AffineMap {
public:
    AffineMap() = default;
    AffineMap(Eigen::MatrixXd rotation, double scale, Eigen::VectorXd offset);

    static AffineMap identity(int dim);
    static AffineMap translation(const Eigen::VectorXd& v);
    static AffineMap scaling(double s, int dim);
    /// Product of planar Givens rotations over disjoint index pairs.
    static AffineMap givens(const std::vector<std::pair<int, int>>& dim_pairs,
                            const std::vector<double>& angles, int dim);

    int dim() const { return static_cast<int>(offset_.size()); }
    const Eigen::MatrixXd& rotation() const { return rotation_; }
    double scale() const { return scale_; }
    const Eigen::VectorXd& offset() const { return offset_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& x) const;
    /// Applies the map to each row of x.
    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& x) const;
    /// Row-wise gradient pullback: given dL/dy for y = apply_rows(x),
    /// returns dL/dx. The linear part of the map is S * R.
    Eigen::MatrixXd pullback_rows(const Eigen::MatrixXd& grad_y) const;

    AffineMap inverse() const;
    /// compose(a, b): x -> a(b(x)).
    static AffineMap compose(const AffineMap& a, const AffineMap& b);

private:
    Eigen::MatrixXd rotation_;
    double scale_ = 1.0;
    Eigen::VectorXd offset_;
};

enum class PerturbKind { translation, scaling, rotation };

/// Time-ramped perturbation intensity: p(t) = min + (t/T) * (max - min).
struct PerturbRamp {
    PerturbKind kind = PerturbKind::translation;
    double param_min = 0.0;
    double param_max = 0.0;
    std::vector<std::pair<int, int>> dim_pairs;  // rotation only

    double param_at(int t, int T) const;
    AffineMap at(int t, int T, int dim) const;

    std::string to_json() const;
    static PerturbRamp from_json(const std::string& text);
};

const char* to_string(PerturbKind k);
PerturbKind perturb_kind_from_string(const std::string& s);

}  // namespace dlfkit
