#include "dxp/ndgrad.hpp"

#include <cmath>
#include <string>

#include "dxp/error.hpp"

namespace dxp {

const char* to_string(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::Tanh: return "tanh";
    }
    return "?";
}

Activation activation_from_string(const std::string& name) {
    if (name == "linear") return Activation::Linear;
    if (name == "relu") return Activation::Relu;
    if (name == "tanh") return Activation::Tanh;
    throw SchemaError("unknown activation '" + name + "'");
}

namespace {

void apply_activation(Activation a, Eigen::MatrixXd& z) {
    switch (a) {
        case Activation::Linear: break;
        case Activation::Relu: z = z.cwiseMax(0.0); break;
        case Activation::Tanh: z = z.array().tanh().matrix(); break;
    }
}

// Multiplies the adjoint by the activation derivative, expressed through the layer output.
void activation_backward(Activation a, const Eigen::MatrixXd& out, Eigen::MatrixXd& adj) {
    switch (a) {
        case Activation::Linear: break;
        case Activation::Relu: adj = (out.array() > 0.0).select(adj, 0.0); break;
        case Activation::Tanh: adj = (adj.array() * (1.0 - out.array().square())).matrix(); break;
    }
}

}  // namespace

DenseNet::DenseNet(std::vector<int> widths, Activation hidden, Rng& rng, double output_scale)
    : widths_(std::move(widths)), hidden_(hidden) {
    if (widths_.size() < 2) throw ContractError("DenseNet needs at least input and output widths");
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
        if (widths_[l] <= 0 || widths_[l + 1] <= 0) throw ContractError("DenseNet widths must be positive");
        offsets_.push_back(total);
        total += static_cast<std::size_t>(widths_[l + 1]) * static_cast<std::size_t>(widths_[l] + 1);
    }
    offsets_.push_back(total);
    params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));

    for (int l = 0; l < layer_count(); ++l) {
        const int fan_in = widths_[static_cast<std::size_t>(l)];
        const int fan_out = widths_[static_cast<std::size_t>(l) + 1];
        const bool output = l + 1 == layer_count();
        // He-uniform for relu layers, Glorot-uniform otherwise.
        double limit = hidden_ == Activation::Relu && !output ? std::sqrt(6.0 / fan_in)
                                                              : std::sqrt(6.0 / (fan_in + fan_out));
        if (output) limit *= output_scale;
        std::uniform_real_distribution<double> dist(-limit, limit);
        const auto off = weight_offset(l);
        for (std::size_t i = 0; i < static_cast<std::size_t>(fan_in * fan_out); ++i)
            params_[static_cast<Eigen::Index>(off + i)] = limit > 0.0 ? dist(rng) : 0.0;
    }
}

std::size_t DenseNet::bias_offset(int layer) const {
    const auto l = static_cast<std::size_t>(layer);
    return offsets_[l] + static_cast<std::size_t>(widths_[l]) * static_cast<std::size_t>(widths_[l + 1]);
}

DenseNet::WeightMap DenseNet::weight(int layer) const {
    const auto l = static_cast<std::size_t>(layer);
    return WeightMap(params_.data() + offsets_[l], widths_[l + 1], widths_[l]);
}

Eigen::Map<const Eigen::VectorXd> DenseNet::bias(int layer) const {
    return Eigen::Map<const Eigen::VectorXd>(params_.data() + bias_offset(layer), widths_[static_cast<std::size_t>(layer) + 1]);
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& inputs) const {
    if (inputs.rows() != input_dim()) throw ContractError("DenseNet input has wrong dimension");
    Eigen::MatrixXd a = inputs;
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weight(l) * a;
        z.colwise() += bias(l);
        if (l + 1 < layer_count()) apply_activation(hidden_, z);
        a = std::move(z);
    }
    return a;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& inputs, GradTape& tape) const {
    if (inputs.rows() != input_dim()) throw ContractError("DenseNet input has wrong dimension");
    tape.values.clear();
    tape.values.reserve(static_cast<std::size_t>(layer_count()) + 1);
    tape.values.push_back(inputs);
    for (int l = 0; l < layer_count(); ++l) {
        Eigen::MatrixXd z = weight(l) * tape.values.back();
        z.colwise() += bias(l);
        if (l + 1 < layer_count()) apply_activation(hidden_, z);
        tape.values.push_back(std::move(z));
    }
    return tape.values.back();
}

Eigen::VectorXd DenseNet::forward_one(const Eigen::VectorXd& input) const {
    Eigen::MatrixXd out = forward(Eigen::MatrixXd(input));
    return out.col(0);
}

Eigen::MatrixXd DenseNet::backward(const GradTape& tape, const Eigen::MatrixXd& output_adjoint, Eigen::VectorXd& grad) const {
    if (tape.values.size() != static_cast<std::size_t>(layer_count()) + 1)
        throw ContractError("gradient tape does not match the network");
    if (output_adjoint.rows() != output_dim() || output_adjoint.cols() != tape.values.back().cols())
        throw ContractError("output adjoint has wrong shape");
    if (grad.size() == 0) grad = Eigen::VectorXd::Zero(params_.size());
    if (grad.size() != params_.size()) throw ContractError("gradient vector has wrong size");

    Eigen::MatrixXd adj = output_adjoint;
    for (int l = layer_count() - 1; l >= 0; --l) {
        const auto ul = static_cast<std::size_t>(l);
        if (l + 1 < layer_count()) activation_backward(hidden_, tape.values[ul + 1], adj);
        const Eigen::MatrixXd& in = tape.values[ul];
        using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
        Eigen::Map<RowMat> gw(grad.data() + weight_offset(l), widths_[ul + 1], widths_[ul]);
        Eigen::Map<Eigen::VectorXd> gb(grad.data() + bias_offset(l), widths_[ul + 1]);
        const RowMat dw = adj * in.transpose();
        const Eigen::VectorXd db = adj.rowwise().sum();
        if (!dw.allFinite() || !db.allFinite())
            throw NumericError("non-finite gradient in layer " + std::to_string(l));
        gw += dw;
        gb += db;
        adj = weight(l).transpose() * adj;
    }
    return adj;
}

nlohmann::json DenseNet::to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (int l = 0; l < layer_count(); ++l) {
        const auto w = weight(l);
        const auto b = bias(l);
        layers.push_back({{"rows", w.rows()},
                          {"cols", w.cols()},
                          {"weights", std::vector<double>(w.data(), w.data() + w.size())},
                          {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
    }
    return {{"format", "dxp-dense"}, {"version", 1}, {"widths", widths_}, {"hidden", to_string(hidden_)}, {"layers", layers}};
}

DenseNet DenseNet::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "dxp-dense" || doc.at("version") != 1) throw SchemaError("unsupported network checkpoint");
        DenseNet net;
        net.widths_ = doc.at("widths").get<std::vector<int>>();
        net.hidden_ = activation_from_string(doc.at("hidden").get<std::string>());
        std::size_t total = 0;
        for (std::size_t l = 0; l + 1 < net.widths_.size(); ++l) {
            net.offsets_.push_back(total);
            total += static_cast<std::size_t>(net.widths_[l + 1]) * static_cast<std::size_t>(net.widths_[l] + 1);
        }
        net.offsets_.push_back(total);
        net.params_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(total));
        const auto& layers = doc.at("layers");
        if (layers.size() != net.widths_.size() - 1) throw SchemaError("layer count mismatch");
        for (int l = 0; l < net.layer_count(); ++l) {
            const auto& layer = layers[static_cast<std::size_t>(l)];
            const auto w = layer.at("weights").get<std::vector<double>>();
            const auto b = layer.at("bias").get<std::vector<double>>();
            const auto rows = static_cast<std::size_t>(net.widths_[static_cast<std::size_t>(l) + 1]);
            const auto cols = static_cast<std::size_t>(net.widths_[static_cast<std::size_t>(l)]);
            if (layer.at("rows").get<std::size_t>() != rows || layer.at("cols").get<std::size_t>() != cols ||
                w.size() != rows * cols || b.size() != rows)
                throw SchemaError("layer " + std::to_string(l) + " has inconsistent shape");
            std::copy(w.begin(), w.end(), net.params_.data() + net.weight_offset(l));
            std::copy(b.begin(), b.end(), net.params_.data() + net.bias_offset(l));
        }
        return net;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("network checkpoint: ") + e.what());
    }
}

Adam::Adam(Eigen::Index n, AdamConfig cfg)
    : cfg_(cfg), m_(Eigen::VectorXd::Zero(n)), v_(Eigen::VectorXd::Zero(n)) {}

void Adam::reset() {
    m_.setZero();
    v_.setZero();
    t_ = 0;
}

void Adam::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad, double learning_rate) {
    if (params.size() != m_.size() || grad.size() != m_.size()) throw ContractError("Adam: shape mismatch");
    require_finite(grad, "gradient");
    ++t_;
    m_ = cfg_.beta1 * m_ + (1.0 - cfg_.beta1) * grad;
    v_ = cfg_.beta2 * v_ + (1.0 - cfg_.beta2) * grad.cwiseAbs2();
    if (learning_rate == 0.0) return;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    params.array() -= learning_rate * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + cfg_.epsilon);
}

void clip_grad_norm(Eigen::VectorXd& grad, double max_norm) {
    if (max_norm <= 0.0) return;
    const double norm = grad.norm();
    if (norm > max_norm) grad *= max_norm / norm;
}

void require_finite(const Eigen::MatrixXd& values, const std::string& what) {
    if (!values.allFinite()) throw NumericError("non-finite " + what);
}

nlohmann::json vector_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vector_from_json(const nlohmann::json& j) {
    const auto v = j.get<std::vector<double>>();
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

nlohmann::json matrix_to_json(const Eigen::MatrixXd& m) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index k = 0; k < m.cols(); ++k) row[static_cast<std::size_t>(k)] = m(i, k);
        rows.push_back(row);
    }
    return rows;
}

Eigen::MatrixXd matrix_from_json(const nlohmann::json& j) {
    const auto rows = j.get<std::vector<std::vector<double>>>();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != static_cast<std::size_t>(m.cols())) throw SchemaError("ragged matrix");
        for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return m;
}

}  // namespace dxp
