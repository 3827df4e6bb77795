#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/rng.hpp"

namespace dxp {

enum class Activation { Linear, Relu, Tanh };

const char* to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// Primal values recorded by a forward pass: the input batch and every layer's output.
struct GradTape {
    std::vector<Eigen::MatrixXd> values;
};

/// Fully connected network with a hidden activation and a linear output layer.
///
/// All parameters live in one flat vector (per layer: row-major weights, then bias), so
/// optimizers, checkpoints and finite-difference checks treat a network as a plain vector.
/// Batches are column-major: one sample per column.
class DenseNet {
public:
    DenseNet() = default;
    /// `widths` = {input, hidden..., output}. The output layer's initial weights are
    /// scaled by `output_scale` (0 gives a constant-output network).
    DenseNet(std::vector<int> widths, Activation hidden, Rng& rng, double output_scale = 1.0);

    int input_dim() const { return widths_.front(); }
    int output_dim() const { return widths_.back(); }
    int layer_count() const { return static_cast<int>(widths_.size()) - 1; }
    const std::vector<int>& widths() const noexcept { return widths_; }
    Activation hidden_activation() const noexcept { return hidden_; }

    Eigen::VectorXd& parameters() noexcept { return params_; }
    const Eigen::VectorXd& parameters() const noexcept { return params_; }
    Eigen::Index parameter_count() const noexcept { return params_.size(); }

    using WeightMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    WeightMap weight(int layer) const;
    Eigen::Map<const Eigen::VectorXd> bias(int layer) const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs) const;
    Eigen::MatrixXd forward(const Eigen::MatrixXd& inputs, GradTape& tape) const;
    Eigen::VectorXd forward_one(const Eigen::VectorXd& input) const;

    /// Reverse pass for a recorded forward. `output_adjoint` is dLoss/dOutput for the
    /// batch; parameter gradients are accumulated into `grad` (resized if empty) and
    /// dLoss/dInput is returned. Throws NumericError naming the layer on non-finite values.
    Eigen::MatrixXd backward(const GradTape& tape, const Eigen::MatrixXd& output_adjoint, Eigen::VectorXd& grad) const;

    nlohmann::json to_json() const;
    static DenseNet from_json(const nlohmann::json& doc);

private:
    std::size_t weight_offset(int layer) const { return offsets_[static_cast<std::size_t>(layer)]; }
    std::size_t bias_offset(int layer) const;

    std::vector<int> widths_;
    Activation hidden_ = Activation::Relu;
    std::vector<std::size_t> offsets_;
    Eigen::VectorXd params_;
};

struct AdamConfig {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adaptive-moment optimizer over a flat parameter vector.
class Adam {
public:
    Adam() = default;
    explicit Adam(Eigen::Index n, AdamConfig cfg = {});

    void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double learning_rate);
    long steps() const noexcept { return t_; }
    void reset();

private:
    AdamConfig cfg_;
    Eigen::VectorXd m_, v_;
    long t_ = 0;
};

/// Rescales `grad` in place so its Euclidean norm is at most `max_norm` (no-op if max_norm <= 0).
void clip_grad_norm(Eigen::VectorXd& grad, double max_norm);

/// Throws NumericError if any entry is non-finite; `what` names the quantity.
void require_finite(const Eigen::MatrixXd& values, const std::string& what);

nlohmann::json vector_to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const nlohmann::json& j);
nlohmann::json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const nlohmann::json& j);

}  // namespace dxp
