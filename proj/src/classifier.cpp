#include "dxp/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dxp/error.hpp"

namespace dxp {

void ClassifierConfig::validate() const {
    if (!(weight_negative >= 0.0) || !(weight_positive >= 0.0))
        throw ConfigError("classifier.class_weights", "weights must be >= 0");
    if (!(weight_negative > 0.0 || weight_positive > 0.0))
        throw ConfigError("classifier.class_weights", "at least one weight must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("classifier.learning_rate", "must be >= 0");
    if (batch_size < 1) throw ConfigError("classifier.batch_size", "must be >= 1");
    if (hidden < 1) throw ConfigError("classifier.hidden", "must be >= 1");
}

nlohmann::json ClassifierConfig::to_json() const {
    return {{"weight_negative", weight_negative}, {"weight_positive", weight_positive},
            {"learning_rate", learning_rate},     {"batch_size", batch_size},
            {"hidden", hidden},                   {"optimizer", optimizer == OptimizerKind::Adam ? "adam" : "sgd"}};
}

ClassifierConfig ClassifierConfig::from_json(const nlohmann::json& doc) {
    ClassifierConfig c;
    c.weight_negative = doc.value("weight_negative", c.weight_negative);
    c.weight_positive = doc.value("weight_positive", c.weight_positive);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.hidden = doc.value("hidden", c.hidden);
    const auto opt = doc.value("optimizer", std::string("adam"));
    if (opt == "adam") c.optimizer = OptimizerKind::Adam;
    else if (opt == "sgd") c.optimizer = OptimizerKind::Sgd;
    else throw ConfigError("classifier.optimizer", "expected 'adam' or 'sgd'");
    return c;
}

Eigen::MatrixXd softmax2(const Eigen::MatrixXd& logits) {
    Eigen::MatrixXd out(logits.rows(), logits.cols());
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double m = logits.col(c).maxCoeff();
        const Eigen::VectorXd e = (logits.col(c).array() - m).exp();
        out.col(c) = e / e.sum();
    }
    return out;
}

LossAndGrad weighted_cross_entropy(const DenseNet& net, const Eigen::MatrixXd& inputs, std::span<const Label> labels,
                                   double weight_negative, double weight_positive) {
    const auto n = inputs.cols();
    if (n == 0 || static_cast<std::size_t>(n) != labels.size()) throw ContractError("cross-entropy: bad batch");
    GradTape tape;
    const Eigen::MatrixXd logits = net.forward(inputs, tape);
    Eigen::MatrixXd dlogits(2, n);
    LossAndGrad out;
    for (Eigen::Index c = 0; c < n; ++c) {
        const double m = logits.col(c).maxCoeff();
        const double lse = m + std::log((logits.col(c).array() - m).exp().sum());
        const int y = is_positive(labels[static_cast<std::size_t>(c)]) ? 1 : 0;
        const double w = y ? weight_positive : weight_negative;
        out.loss += w * (lse - logits(y, c));
        for (int j = 0; j < 2; ++j) dlogits(j, c) = w * (std::exp(logits(j, c) - lse) - (j == y ? 1.0 : 0.0));
    }
    out.loss /= static_cast<double>(n);
    dlogits /= static_cast<double>(n);
    out.grad = Eigen::VectorXd::Zero(net.parameter_count());
    net.backward(tape, dlogits, out.grad);
    return out;
}

Classifier::Classifier(DenseNet net, ClassifierConfig cfg) : net_(std::move(net)), cfg_(cfg), adam_(net_.parameter_count()) {
    if (net_.output_dim() != 2) throw ContractError("classifier needs two output logits");
}

Classifier Classifier::create(int d, const ClassifierConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    return Classifier(DenseNet({d, cfg.hidden, cfg.hidden, 2}, Activation::Relu, rng), cfg);
}

Eigen::Vector2d Classifier::predict_proba(const Eigen::VectorXd& x) const {
    return softmax2(net_.forward(x)).col(0);
}

Eigen::MatrixXd Classifier::predict_proba(const Eigen::MatrixXd& xs) const { return softmax2(net_.forward(xs)); }

double Classifier::train_step(const Eigen::MatrixXd& inputs, std::span<const Label> labels) {
    LossAndGrad lg;
    try {
        lg = weighted_cross_entropy(net_, inputs, labels, cfg_.weight_negative, cfg_.weight_positive);
    } catch (const NumericError&) {
        lg.loss = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(lg.loss) || !lg.grad.allFinite())
        throw TrainingError("classifier loss is not finite at step " + std::to_string(version_ + 1));
    if (cfg_.optimizer == OptimizerKind::Adam) adam_.step(net_.parameters(), lg.grad, cfg_.learning_rate);
    else net_.parameters() -= cfg_.learning_rate * lg.grad;
    ++version_;
    return lg.loss;
}

nlohmann::json Classifier::to_json() const {
    return {{"format", "dxp-classifier"}, {"version", 1}, {"config", cfg_.to_json()}, {"net", net_.to_json()},
            {"updates", version_}};
}

Classifier Classifier::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "dxp-classifier" || doc.at("version") != 1) throw SchemaError("unsupported classifier checkpoint");
        Classifier c(DenseNet::from_json(doc.at("net")), ClassifierConfig::from_json(doc.at("config")));
        c.version_ = doc.value("updates", std::uint64_t{0});
        return c;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("classifier checkpoint: ") + e.what());
    }
}

double pretrain_classifier(Classifier& clf, const Encoder& encoder, std::span<const MaskedSample> samples, int epochs,
                           std::uint64_t seed) {
    if (samples.empty() || epochs <= 0) return 0.0;
    const int d = clf.input_dim();
    const auto n = static_cast<Eigen::Index>(samples.size());
    Eigen::MatrixXd completed(d, n);
    std::vector<Label> labels(samples.size());
    for (Eigen::Index c = 0; c < n; ++c) {
        const auto& s = samples[static_cast<std::size_t>(c)];
        completed.col(c) = encoder.impute(s.features, s.mask);
        labels[static_cast<std::size_t>(c)] = s.label;
    }
    Rng rng(seed);
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    const int bs = clf.config().batch_size;
    double last = 0.0;
    for (int e = 0; e < epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum = 0.0;
        int batches = 0;
        for (Eigen::Index start = 0; start < n; start += bs) {
            const Eigen::Index len = std::min<Eigen::Index>(bs, n - start);
            Eigen::MatrixXd xb(d, len);
            std::vector<Label> yb(static_cast<std::size_t>(len));
            for (Eigen::Index j = 0; j < len; ++j) {
                const auto c = order[static_cast<std::size_t>(start + j)];
                xb.col(j) = completed.col(c);
                yb[static_cast<std::size_t>(j)] = labels[static_cast<std::size_t>(c)];
            }
            sum += clf.train_step(xb, yb);
            ++batches;
        }
        last = sum / batches;
    }
    return last;
}

}  // namespace dxp
