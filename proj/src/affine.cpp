#include "dlfkit/affine.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

AffineMap::AffineMap(Eigen::MatrixXd rotation, double scale, Eigen::VectorXd offset)
    : rotation_(std::move(rotation)), scale_(scale), offset_(std::move(offset)) {
    if (rotation_.rows() != rotation_.cols() || rotation_.rows() != offset_.size())
        throw std::invalid_argument("AffineMap: dimension mismatch");
    if (!(scale_ > 0.0)) throw std::invalid_argument("AffineMap: scale must be > 0");
    if (!offset_.allFinite() || !rotation_.allFinite())
        throw std::invalid_argument("AffineMap: non-finite components");
}

AffineMap AffineMap::identity(int dim) {
    return AffineMap(Eigen::MatrixXd::Identity(dim, dim), 1.0,
                     Eigen::VectorXd::Zero(dim));
}

AffineMap AffineMap::translation(const Eigen::VectorXd& v) {
    if (!v.allFinite()) throw std::invalid_argument("translation: non-finite offset");
    return AffineMap(Eigen::MatrixXd::Identity(v.size(), v.size()), 1.0, v);
}

AffineMap AffineMap::scaling(double s, int dim) {
    if (!(s > 0.0)) throw std::invalid_argument("scaling: factor must be > 0");
    return AffineMap(Eigen::MatrixXd::Identity(dim, dim), s,
                     Eigen::VectorXd::Zero(dim));
}

AffineMap AffineMap::givens(const std::vector<std::pair<int, int>>& dim_pairs,
                            const std::vector<double>& angles, int dim) {
    if (dim_pairs.size() != angles.size())
        throw std::invalid_argument("givens: pairs/angles size mismatch");
    std::set<int> used;
    Eigen::MatrixXd R = Eigen::MatrixXd::Identity(dim, dim);
    for (size_t k = 0; k < dim_pairs.size(); ++k) {
        auto [i, j] = dim_pairs[k];
        if (i < 0 || j < 0 || i >= dim || j >= dim || i == j)
            throw std::invalid_argument("givens: index out of range");
        if (!used.insert(i).second || !used.insert(j).second)
            throw std::invalid_argument("givens: overlapping index pairs");
        double c = std::cos(angles[k]), s = std::sin(angles[k]);
        // Disjoint planes commute, so writing the 2x2 block directly is exact.
        R(i, i) = c;
        R(i, j) = -s;
        R(j, i) = s;
        R(j, j) = c;
    }
    return AffineMap(std::move(R), 1.0, Eigen::VectorXd::Zero(dim));
}

Eigen::VectorXd AffineMap::apply(const Eigen::VectorXd& x) const {
    return rotation_ * (scale_ * (x - offset_));
}

Eigen::MatrixXd AffineMap::apply_rows(const Eigen::MatrixXd& x) const {
    if (x.cols() != dim()) throw std::invalid_argument("AffineMap: column count mismatch");
    return (scale_ * (x.rowwise() - offset_.transpose())) * rotation_.transpose();
}

Eigen::MatrixXd AffineMap::pullback_rows(const Eigen::MatrixXd& grad_y) const {
    return scale_ * (grad_y * rotation_);
}

AffineMap AffineMap::inverse() const {
    // y = R S (x - T)  =>  x = R^T y / S + T = R^T/S * (y + S R T)
    return AffineMap(rotation_.transpose(), 1.0 / scale_,
                     -scale_ * (rotation_ * offset_));
}

AffineMap AffineMap::compose(const AffineMap& a, const AffineMap& b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("compose: dimension mismatch");
    // a(b(x)) = Ra Sa (Rb Sb (x - Tb) - Ta)
    //         = (Ra Rb)(Sa Sb)(x - Tb - Rb^T Ta / Sb)
    Eigen::MatrixXd R = a.rotation_ * b.rotation_;
    double S = a.scale_ * b.scale_;
    Eigen::VectorXd T = b.offset_ + b.rotation_.transpose() * a.offset_ / b.scale_;
    return AffineMap(std::move(R), S, std::move(T));
}

double PerturbRamp::param_at(int t, int T) const {
    if (t < 1 || t > T) throw std::out_of_range("PerturbRamp: t outside [1,T]");
    return param_min + (static_cast<double>(t) / T) * (param_max - param_min);
}

AffineMap PerturbRamp::at(int t, int T, int dim) const {
    double p = param_at(t, T);
    switch (kind) {
        case PerturbKind::translation:
            return AffineMap::translation(Eigen::VectorXd::Constant(dim, p));
        case PerturbKind::scaling:
            return AffineMap::scaling(p, dim);
        case PerturbKind::rotation: {
            std::vector<double> angles(dim_pairs.size(), p);
            return AffineMap::givens(dim_pairs, angles, dim);
        }
    }
    throw std::logic_error("PerturbRamp: unknown kind");
}

const char* to_string(PerturbKind k) {
    switch (k) {
        case PerturbKind::translation: return "translation";
        case PerturbKind::scaling: return "scaling";
        case PerturbKind::rotation: return "rotation";
    }
    return "?";
}

PerturbKind perturb_kind_from_string(const std::string& s) {
    if (s == "translation") return PerturbKind::translation;
    if (s == "scaling") return PerturbKind::scaling;
    if (s == "rotation") return PerturbKind::rotation;
    throw std::invalid_argument("unknown perturbation kind '" + s + "'");
}

std::string PerturbRamp::to_json() const {
    nlohmann::json j;
    j["kind"] = to_string(kind);
    j["min"] = param_min;
    j["max"] = param_max;
    j["dim_pairs"] = nlohmann::json::array();
    for (auto& [i, k] : dim_pairs) j["dim_pairs"].push_back({i, k});
    return j.dump();
}

PerturbRamp PerturbRamp::from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    PerturbRamp r;
    r.kind = perturb_kind_from_string(j.at("kind").get<std::string>());
    r.param_min = j.at("min").get<double>();
    r.param_max = j.at("max").get<double>();
    if (r.param_min > r.param_max)
        throw std::invalid_argument("PerturbRamp: min > max");
    for (auto& p : j.value("dim_pairs", nlohmann::json::array()))
        r.dim_pairs.emplace_back(p.at(0).get<int>(), p.at(1).get<int>());
    return r;
}

}  // namespace dlfkit
