#pragma once

#include <memory>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/env.hpp"
#include "dxp/metrics.hpp"

namespace dxp {

/// Deterministic decision rule over embedded states.
class DecisionPolicy {
public:
    virtual ~DecisionPolicy() = default;
    virtual int decide(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid) const = 0;
};

struct EvalReport {
    ConfusionTally tally;
    /// Fraction of episodes that bought each panel.
    std::vector<double> panel_rates;
    double f1 = 0.0;
    double am = 0.0;     // NaN when a class is absent
    double auroc = 0.0;  // NaN when a class is absent
    double mean_cost = 0.0;

    nlohmann::json to_json() const;
};

/// Runs one eval-mode episode (visible features only at the start) per record, in order.
/// AUROC scores each episode by the classifier's P probability at its final state.
EvalReport evaluate_policy(const DecisionPolicy& policy, const EnvConfig& cfg,
                           std::shared_ptr<const std::vector<PatientRecord>> records,
                           std::shared_ptr<const Encoder> encoder, std::shared_ptr<const Classifier> classifier);

}  // namespace dxp
