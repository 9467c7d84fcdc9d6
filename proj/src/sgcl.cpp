#include "dlfkit/sgcl.hpp"

#include <cmath>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

Eigen::VectorXd Box::fields() const {
    Eigen::VectorXd f(field_count());
    f.head(dim()) = center;
    f.segment(dim(), dim()) = size;
    f[2 * dim()] = yaw;
    return f;
}

std::vector<int> assign_box(const Eigen::MatrixXd& centers,
                            const std::vector<Box>& boxes) {
    if (boxes.empty()) throw std::invalid_argument("assign_box: empty box list");
    for (auto& b : boxes)
        if (b.dim() != centers.cols())
            throw std::invalid_argument("assign_box: box/point dimension mismatch");

    std::vector<int> assignment(centers.rows());
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        int best = 0;
        double best_d = (centers.row(i).transpose() - boxes[0].center).squaredNorm();
        for (size_t k = 1; k < boxes.size(); ++k) {
            double d = (centers.row(i).transpose() - boxes[k].center).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = static_cast<int>(k);
            }
        }
        assignment[i] = best;
    }
    return assignment;
}

std::vector<int> inside_mask(const Eigen::MatrixXd& centers,
                             const std::vector<Box>& boxes,
                             const std::vector<int>& assignment) {
    if (assignment.size() != static_cast<size_t>(centers.rows()))
        throw std::invalid_argument("inside_mask: assignment size mismatch");

    std::vector<int> mask(centers.rows(), 0);
    for (Eigen::Index i = 0; i < centers.rows(); ++i) {
        const Box& b = boxes.at(assignment[i]);
        Eigen::VectorXd rel = centers.row(i).transpose() - b.center;
        // Rotate into the box frame by -yaw about the up-axis (first two axes).
        double c = std::cos(-b.yaw), s = std::sin(-b.yaw);
        double rx = c * rel[0] - s * rel[1];
        double ry = s * rel[0] + c * rel[1];
        rel[0] = rx;
        rel[1] = ry;
        bool inside = true;
        for (int a = 0; a < b.dim(); ++a)
            if (std::abs(rel[a]) > b.size[a] / 2.0) inside = false;
        mask[i] = inside ? 1 : 0;
    }
    return mask;
}

Eigen::MatrixXd box_fields_per_point(const std::vector<Box>& boxes,
                                     const std::vector<int>& assignment,
                                     const std::vector<int>& mask) {
    if (boxes.empty()) throw std::invalid_argument("box_fields_per_point: empty box list");
    int fc = boxes.front().field_count();
    Eigen::MatrixXd fields = Eigen::MatrixXd::Zero(assignment.size(), fc);
    for (size_t i = 0; i < assignment.size(); ++i) {
        if (mask[i] == 0) continue;  // background rows stay zero-filled
        fields.row(i) = boxes.at(assignment[i]).fields().transpose();
    }
    return fields;
}

ConditionEmbedding embed_and_fuse(const Eigen::MatrixXd& features,
                                  const std::vector<int>& mask,
                                  const Eigen::MatrixXd& box_fields,
                                  const DenseNet& sem_net, const DenseNet& geo_net,
                                  const DenseNet& fuse_net, Tape* sem_tape,
                                  Tape* geo_tape, Tape* fuse_tape) {
    Eigen::Index n = features.rows();
    if (static_cast<Eigen::Index>(mask.size()) != n || box_fields.rows() != n)
        throw std::invalid_argument("embed_and_fuse: row count mismatch");

    Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, 2);
    for (Eigen::Index i = 0; i < n; ++i) onehot(i, mask[i] ? 1 : 0) = 1.0;

    ConditionEmbedding out;
    out.e_sem = sem_net.forward(onehot, {}, nullptr, sem_tape);
    out.e_geo = geo_net.forward(box_fields, {}, nullptr, geo_tape);

    Eigen::MatrixXd cat(n, out.e_sem.cols() + out.e_geo.cols());
    cat << out.e_sem, out.e_geo;
    out.fused = features + fuse_net.forward(cat, {}, nullptr, fuse_tape);
    return out;
}

std::string box_to_json(const Box& b) {
    nlohmann::json j;
    j["center"] = std::vector<double>(b.center.data(), b.center.data() + b.center.size());
    j["size"] = std::vector<double>(b.size.data(), b.size.data() + b.size.size());
    j["yaw"] = b.yaw;
    return j.dump();
}

Box box_from_json(const std::string& text) {
    auto j = nlohmann::json::parse(text);
    Box b;
    auto c = j.at("center").get<std::vector<double>>();
    auto s = j.at("size").get<std::vector<double>>();
    b.center = Eigen::Map<Eigen::VectorXd>(c.data(), c.size());
    b.size = Eigen::Map<Eigen::VectorXd>(s.data(), s.size());
    b.yaw = j.at("yaw").get<double>();
    for (int a = 0; a < b.dim(); ++a)
        if (!(b.size[a] > 0.0)) throw std::invalid_argument("Box: size must be positive");
    return b;
}

}  // namespace dlfkit
