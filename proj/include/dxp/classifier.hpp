#pragma once

#include <cstdint>
#include <span>
#include <string>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/dataset.hpp"
#include "dxp/encoder.hpp"
#include "dxp/ndgrad.hpp"

namespace dxp {

enum class OptimizerKind { Adam, Sgd };

struct ClassifierConfig {
    double weight_negative = 1.0;
    double weight_positive = 5.0;
    double learning_rate = 5e-4;
    int batch_size = 256;
    int hidden = 64;
    OptimizerKind optimizer = OptimizerKind::Adam;

    void validate() const;
    nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& doc);
};

/// Mean class-weighted cross-entropy of a two-logit network over a batch (one column per
/// sample), with its parameter gradient.
LossAndGrad weighted_cross_entropy(const DenseNet& net, const Eigen::MatrixXd& inputs, std::span<const Label> labels,
                                   double weight_negative, double weight_positive);

/// Column-wise softmax over the two logits.
Eigen::MatrixXd softmax2(const Eigen::MatrixXd& logits);

/// Diagnosis head: completed state -> (p_N, p_P).
class Classifier {
public:
    Classifier() = default;
    Classifier(DenseNet net, ClassifierConfig cfg);
    static Classifier create(int d, const ClassifierConfig& cfg, std::uint64_t seed);

    int input_dim() const { return net_.input_dim(); }
    const ClassifierConfig& config() const noexcept { return cfg_; }
    const DenseNet& net() const noexcept { return net_; }
    DenseNet& net() noexcept { return net_; }

    /// Bumped by every train_step; rollouts record it to prove which snapshot they used.
    std::uint64_t version() const noexcept { return version_; }

    Eigen::Vector2d predict_proba(const Eigen::VectorXd& x) const;
    /// 2 × n matrix of probabilities.
    Eigen::MatrixXd predict_proba(const Eigen::MatrixXd& xs) const;

    /// One optimizer step on the weighted cross-entropy of the batch; returns the pre-step loss.
    double train_step(const Eigen::MatrixXd& inputs, std::span<const Label> labels);

    nlohmann::json to_json() const;
    static Classifier from_json(const nlohmann::json& doc);

private:
    DenseNet net_;
    ClassifierConfig cfg_;
    Adam adam_;
    std::uint64_t version_ = 0;
};

/// Trains on encoder completions of randomly masked records (the "pretrained" start).
/// Returns the mean loss of the last epoch.
double pretrain_classifier(Classifier& clf, const Encoder& encoder, std::span<const MaskedSample> samples, int epochs,
                           std::uint64_t seed);

}  // namespace dxp
