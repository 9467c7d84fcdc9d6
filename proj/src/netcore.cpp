#include "dlfkit/netcore.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace dlfkit {

namespace {

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::linear) return z;
    return z.unaryExpr([](double v) { return v * sigmoid(v); });
}

Eigen::MatrixXd activate_grad(const Eigen::MatrixXd& z, Activation act) {
    if (act == Activation::linear) return Eigen::MatrixXd::Ones(z.rows(), z.cols());
    return z.unaryExpr([](double v) {
        double s = sigmoid(v);
        return s * (1.0 + v * (1.0 - s));
    });
}

}  // namespace

void GradientBuffer::set_zero() {
    for (auto& g : dW) g.setZero();
    for (auto& g : db) g.setZero();
    d_time_W.setZero();
    d_time_b.setZero();
}

void GradientBuffer::accumulate(const GradientBuffer& other) {
    for (size_t i = 0; i < dW.size(); ++i) dW[i] += other.dW[i];
    for (size_t i = 0; i < db.size(); ++i) db[i] += other.db[i];
    if (d_time_W.size() > 0) {
        d_time_W += other.d_time_W;
        d_time_b += other.d_time_b;
    }
}

void GradientBuffer::scale(double s) {
    for (auto& g : dW) g *= s;
    for (auto& g : db) g *= s;
    d_time_W *= s;
    d_time_b *= s;
}

double GradientBuffer::squared_norm() const {
    double acc = 0.0;
    for (auto& g : dW) acc += g.squaredNorm();
    for (auto& g : db) acc += g.squaredNorm();
    acc += d_time_W.squaredNorm() + d_time_b.squaredNorm();
    return acc;
}

Eigen::VectorXd sinusoidal_time_features(int t, int dim) {
    Eigen::VectorXd feat(dim);
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq = std::exp(-std::log(10000.0) * k / std::max(1, half - 1));
        feat[k] = std::sin(t * freq);
        feat[half + k] = std::cos(t * freq);
    }
    if (dim % 2 == 1) feat[dim - 1] = std::sin(t * 1e-4);
    return feat;
}

DenseNet DenseNet::make(const std::vector<int>& widths, Activation hidden_act,
                        int time_embed_dim, int cond_dim, std::mt19937_64& rng) {
    if (widths.size() < 2) throw std::invalid_argument("DenseNet: need >= 2 widths");
    DenseNet net;
    net.input_dim_ = widths.front();
    net.cond_dim_ = cond_dim;
    net.time_embed_dim_ = time_embed_dim;

    std::normal_distribution<double> dist(0.0, 1.0);
    auto init = [&](Eigen::Index rows, Eigen::Index cols) {
        Eigen::MatrixXd m(rows, cols);
        double scale = std::sqrt(2.0 / static_cast<double>(rows));
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = scale * dist(rng);
        return m;
    };

    for (size_t l = 0; l + 1 < widths.size(); ++l) {
        Layer layer;
        int in = widths[l] + (l == 0 ? cond_dim : 0);
        layer.W = init(in, widths[l + 1]);
        layer.b = Eigen::VectorXd::Zero(widths[l + 1]);
        layer.act = (l + 2 == widths.size()) ? Activation::linear : hidden_act;
        net.layers_.push_back(std::move(layer));
    }
    if (time_embed_dim > 0) {
        net.time_W_ = init(time_embed_dim, widths[1]);
        net.time_b_ = Eigen::VectorXd::Zero(widths[1]);
    }
    return net;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x, std::optional<int> t,
                                  const Eigen::MatrixXd* cond, Tape* tape) const {
    Eigen::MatrixXd h;
    if (cond_dim_ > 0) {
        if (!cond || cond->cols() != cond_dim_ || cond->rows() != x.rows())
            throw std::invalid_argument("DenseNet: condition shape mismatch");
        h.resize(x.rows(), x.cols() + cond->cols());
        h << x, *cond;
    } else {
        h = x;
    }
    if (h.cols() != layers_.front().W.rows())
        throw std::invalid_argument("DenseNet: input width mismatch");
    if (time_embed_dim_ > 0 && !t)
        throw std::invalid_argument("DenseNet: timestep required");

    if (tape) {
        tape->x_full = h;
        tape->pre.clear();
        tape->post.clear();
        tape->param_version = param_version_;
        tape->owner = this;
    }

    for (size_t l = 0; l < layers_.size(); ++l) {
        Eigen::MatrixXd z = (h * layers_[l].W).rowwise() + layers_[l].b.transpose();
        if (l == 0 && time_embed_dim_ > 0) {
            Eigen::VectorXd feat = sinusoidal_time_features(*t, time_embed_dim_);
            Eigen::RowVectorXd emb = (feat.transpose() * time_W_) + time_b_.transpose();
            z.rowwise() += emb;
            if (tape) tape->time_feat = feat;
        }
        h = activate(z, layers_[l].act);
        if (tape) {
            tape->pre.push_back(z);
            tape->post.push_back(h);
        }
    }
    return h;
}

BackwardResult DenseNet::backward(const Eigen::MatrixXd& grad_out,
                                  const Tape& tape) const {
    if (tape.owner != this || tape.param_version != param_version_)
        throw std::runtime_error("DenseNet: stale or foreign tape");

    BackwardResult result;
    result.grads = zero_grads();

    Eigen::MatrixXd grad = grad_out;
    for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
        Eigen::MatrixXd dz = grad.cwiseProduct(activate_grad(tape.pre[l], layers_[l].act));
        const Eigen::MatrixXd& in = (l == 0) ? tape.x_full : tape.post[l - 1];
        result.grads.dW[l] = in.transpose() * dz;
        result.grads.db[l] = dz.colwise().sum();
        if (l == 0 && time_embed_dim_ > 0) {
            Eigen::RowVectorXd demb = dz.colwise().sum();
            result.grads.d_time_W = tape.time_feat * demb;
            result.grads.d_time_b = demb.transpose();
        }
        grad = dz * layers_[l].W.transpose();
    }
    result.grad_input = std::move(grad);
    return result;
}

GradientBuffer DenseNet::zero_grads() const {
    GradientBuffer g;
    for (auto& layer : layers_) {
        g.dW.emplace_back(Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()));
        g.db.emplace_back(Eigen::VectorXd::Zero(layer.b.size()));
    }
    if (time_embed_dim_ > 0) {
        g.d_time_W = Eigen::MatrixXd::Zero(time_W_.rows(), time_W_.cols());
        g.d_time_b = Eigen::VectorXd::Zero(time_b_.size());
    } else {
        g.d_time_W = Eigen::MatrixXd::Zero(0, 0);
        g.d_time_b = Eigen::VectorXd::Zero(0);
    }
    return g;
}

std::size_t DenseNet::param_count() const {
    std::size_t n = 0;
    for (auto& layer : layers_) n += layer.W.size() + layer.b.size();
    n += time_W_.size() + time_b_.size();
    return n;
}

Eigen::VectorXd DenseNet::flatten_params() const {
    Eigen::VectorXd flat(param_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) flat[at++] = m.data()[i];
    };
    for (auto& layer : layers_) {
        put(layer.W);
        put(layer.b);
    }
    put(time_W_);
    put(time_b_);
    return flat;
}

void DenseNet::unflatten_params(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != param_count())
        throw std::invalid_argument("DenseNet: flat parameter size mismatch");
    Eigen::Index at = 0;
    auto take = [&](auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = flat[at++];
    };
    for (auto& layer : layers_) {
        take(layer.W);
        take(layer.b);
    }
    take(time_W_);
    take(time_b_);
    ++param_version_;
}

Eigen::VectorXd DenseNet::flatten_grads(const GradientBuffer& g) const {
    Eigen::VectorXd flat(param_count());
    Eigen::Index at = 0;
    auto put = [&](const auto& m) {
        for (Eigen::Index i = 0; i < m.size(); ++i) flat[at++] = m.data()[i];
    };
    for (size_t l = 0; l < layers_.size(); ++l) {
        put(g.dW[l]);
        put(g.db[l]);
    }
    put(g.d_time_W);
    put(g.d_time_b);
    return flat;
}

namespace {
constexpr std::uint32_t kNetMagic = 0x444c464b;  // "DLFK"
}

void DenseNet::save(std::ostream& os) const {
    nlohmann::json j;
    j["version"] = 1;
    j["input_dim"] = input_dim_;
    j["cond_dim"] = cond_dim_;
    j["time_embed_dim"] = time_embed_dim_;
    j["layers"] = nlohmann::json::array();
    for (auto& layer : layers_)
        j["layers"].push_back({{"in", layer.W.rows()},
                               {"out", layer.W.cols()},
                               {"act", layer.act == Activation::silu ? "silu" : "linear"}});
    std::string manifest = j.dump();
    std::uint64_t mlen = manifest.size();
    os.write(reinterpret_cast<const char*>(&kNetMagic), sizeof(kNetMagic));
    os.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
    os.write(manifest.data(), static_cast<std::streamsize>(mlen));
    Eigen::VectorXd flat = flatten_params();
    std::uint64_t n = static_cast<std::uint64_t>(flat.size());
    os.write(reinterpret_cast<const char*>(&n), sizeof(n));
    os.write(reinterpret_cast<const char*>(flat.data()),
             static_cast<std::streamsize>(n * sizeof(double)));
}

DenseNet DenseNet::load(std::istream& is) {
    std::uint32_t magic = 0;
    std::uint64_t mlen = 0;
    is.read(reinterpret_cast<char*>(&magic), sizeof(magic));
    if (!is || magic != kNetMagic) throw std::runtime_error("DenseNet: bad checkpoint magic");
    is.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
    std::string manifest(mlen, '\0');
    is.read(manifest.data(), static_cast<std::streamsize>(mlen));
    auto j = nlohmann::json::parse(manifest);
    if (j.at("version").get<int>() != 1)
        throw std::runtime_error("DenseNet: unsupported checkpoint version");

    DenseNet net;
    net.input_dim_ = j.at("input_dim").get<int>();
    net.cond_dim_ = j.at("cond_dim").get<int>();
    net.time_embed_dim_ = j.at("time_embed_dim").get<int>();
    for (auto& lj : j.at("layers")) {
        Layer layer;
        layer.W = Eigen::MatrixXd::Zero(lj.at("in").get<int>(), lj.at("out").get<int>());
        layer.b = Eigen::VectorXd::Zero(lj.at("out").get<int>());
        layer.act = lj.at("act").get<std::string>() == "silu" ? Activation::silu
                                                              : Activation::linear;
        net.layers_.push_back(std::move(layer));
    }
    if (net.time_embed_dim_ > 0) {
        net.time_W_ = Eigen::MatrixXd::Zero(net.time_embed_dim_,
                                            net.layers_.front().W.cols());
        net.time_b_ = Eigen::VectorXd::Zero(net.layers_.front().W.cols());
    }
    std::uint64_t n = 0;
    is.read(reinterpret_cast<char*>(&n), sizeof(n));
    if (n != net.param_count()) throw std::runtime_error("DenseNet: checkpoint size mismatch");
    Eigen::VectorXd flat(static_cast<Eigen::Index>(n));
    is.read(reinterpret_cast<char*>(flat.data()),
            static_cast<std::streamsize>(n * sizeof(double)));
    if (!is) throw std::runtime_error("DenseNet: truncated checkpoint");
    net.unflatten_params(flat);
    return net;
}

AdamOptimizer::AdamOptimizer(const DenseNet& net)
    : m_(net.zero_grads()), v_(net.zero_grads()) {}

void AdamOptimizer::step(DenseNet& net, const GradientBuffer& grads, double lr,
                         double beta1, double beta2, double eps) {
    ++step_count_;
    double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count_));
    double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count_));

    auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g.cwiseProduct(g);
        auto m_hat = m / bc1;
        auto v_hat = v / bc2;
        param -= lr * (m_hat.array() / (v_hat.array().sqrt() + eps)).matrix();
    };

    for (size_t l = 0; l < net.layers().size(); ++l) {
        update(net.layers()[l].W, m_.dW[l], v_.dW[l], grads.dW[l]);
        update(net.layers()[l].b, m_.db[l], v_.db[l], grads.db[l]);
    }
    if (net.time_embed_dim() > 0) {
        update(net.time_W(), m_.d_time_W, v_.d_time_W, grads.d_time_W);
        update(net.time_b(), m_.d_time_b, v_.d_time_b, grads.d_time_b);
    }
    net.bump_version();
}

GradCheckReport grad_check(const DenseNet& net, const Eigen::MatrixXd& x,
                           std::optional<int> t, const Eigen::MatrixXd* cond,
                           double tolerance, std::mt19937_64& rng) {
    DenseNet work = net;  // copy so probing never touches the caller's net
    std::normal_distribution<double> dist(0.0, 1.0);
    Tape tape;
    Eigen::MatrixXd out = work.forward(x, t, cond, &tape);
    Eigen::MatrixXd target(out.rows(), out.cols());
    for (Eigen::Index i = 0; i < target.size(); ++i) target.data()[i] = dist(rng);

    double numel = static_cast<double>(out.size());
    Eigen::MatrixXd loss_grad = 2.0 * (out - target) / numel;
    auto analytic = work.flatten_grads(work.backward(loss_grad, tape).grads);

    auto loss_at = [&](const Eigen::VectorXd& flat) {
        work.unflatten_params(flat);
        Eigen::MatrixXd y = work.forward(x, t, cond);
        return (y - target).squaredNorm() / numel;
    };

    Eigen::VectorXd flat = work.flatten_params();
    const double h = 1e-5;
    GradCheckReport report;
    report.params_checked = static_cast<std::size_t>(flat.size());
    for (Eigen::Index i = 0; i < flat.size(); ++i) {
        Eigen::VectorXd probe = flat;
        probe[i] = flat[i] + h;
        double lp = loss_at(probe);
        probe[i] = flat[i] - h;
        double lm = loss_at(probe);
        double fd = (lp - lm) / (2.0 * h);
        double denom = std::max({1e-6, std::abs(fd), std::abs(analytic[i])});
        report.max_rel_err = std::max(report.max_rel_err,
                                      std::abs(fd - analytic[i]) / denom);
    }
    report.pass = report.max_rel_err < tolerance;
    return report;
}

}  // namespace dlfkit
