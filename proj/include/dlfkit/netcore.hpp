#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace dlfkit {

enum class Activation { linear, silu };

struct Layer {
    Eigen::MatrixXd W;  // in x out
    Eigen::VectorXd b;  // out
    Activation act = Activation::linear;
};

struct GradientBuffer {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
    Eigen::MatrixXd d_time_W;
    Eigen::VectorXd d_time_b;

    void set_zero();
    void accumulate(const GradientBuffer& other);
    void scale(double s);
    double squared_norm() const;
};

/// Forward record consumed by backward(). Tied to the parameter version of
/// the network that produced it; a parameter update invalidates the tape.
struct Tape {
    Eigen::MatrixXd x_full;             // input with cond columns appended
    std::vector<Eigen::MatrixXd> pre;   // pre-activations per layer
    std::vector<Eigen::MatrixXd> post;  // activations per layer
    Eigen::VectorXd time_feat;
    std::uint64_t param_version = 0;
    const void* owner = nullptr;
};

struct BackwardResult {
    GradientBuffer grads;
    Eigen::MatrixXd grad_input;  // n x (input_dim + cond_dim)
};

/// Small time-conditioned MLP with explicit reverse-mode gradients.
/// Time conditioning: sinusoidal features of t through a learned linear
/// projection, added to the first hidden pre-activation. An optional
/// condition matrix is concatenated to the input columns.
class DenseNet {
public:
    DenseNet() = default;

    /// widths = {input, hidden..., output}; hidden layers use `hidden_act`,
    /// the output layer is linear. cond_dim columns are expected appended
    /// to every input when cond_dim > 0.
    static DenseNet make(const std::vector<int>& widths, Activation hidden_act,
                         int time_embed_dim, int cond_dim, std::mt19937_64& rng);

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x, std::optional<int> t = {},
                            const Eigen::MatrixXd* cond = nullptr,
                            Tape* tape = nullptr) const;

    BackwardResult backward(const Eigen::MatrixXd& grad_out, const Tape& tape) const;

    GradientBuffer zero_grads() const;

    int input_dim() const { return input_dim_; }
    int cond_dim() const { return cond_dim_; }
    int output_dim() const { return layers_.empty() ? 0 : static_cast<int>(layers_.back().W.cols()); }
    int time_embed_dim() const { return time_embed_dim_; }
    std::size_t layer_count() const { return layers_.size(); }
    const std::vector<Layer>& layers() const { return layers_; }
    std::vector<Layer>& layers() { return layers_; }
    Eigen::MatrixXd& time_W() { return time_W_; }
    const Eigen::MatrixXd& time_W() const { return time_W_; }
    Eigen::VectorXd& time_b() { return time_b_; }
    const Eigen::VectorXd& time_b() const { return time_b_; }

    std::size_t param_count() const;
    std::uint64_t param_version() const { return param_version_; }
    void bump_version() { ++param_version_; }

    /// Flat parameter access, used by finite differences and serialization.
    Eigen::VectorXd flatten_params() const;
    void unflatten_params(const Eigen::VectorXd& flat);
    Eigen::VectorXd flatten_grads(const GradientBuffer& g) const;

    void save(std::ostream& os) const;
    static DenseNet load(std::istream& is);

private:
    std::vector<Layer> layers_;
    Eigen::MatrixXd time_W_;
    Eigen::VectorXd time_b_;
    int input_dim_ = 0;
    int cond_dim_ = 0;
    int time_embed_dim_ = 0;
    std::uint64_t param_version_ = 0;
};

Eigen::VectorXd sinusoidal_time_features(int t, int dim);

/// Adam with bias correction; owns first/second moment state for one net.
class AdamOptimizer {
public:
    explicit AdamOptimizer(const DenseNet& net);
    void step(DenseNet& net, const GradientBuffer& grads, double lr,
              double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    std::int64_t step_count() const { return step_count_; }

private:
    GradientBuffer m_, v_;
    std::int64_t step_count_ = 0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    bool pass = false;
    std::size_t params_checked = 0;
};

/// Central finite differences of an MSE loss against analytic gradients.
GradCheckReport grad_check(const DenseNet& net, const Eigen::MatrixXd& x,
                           std::optional<int> t, const Eigen::MatrixXd* cond,
                           double tolerance, std::mt19937_64& rng);

}  // namespace dlfkit
