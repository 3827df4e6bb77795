#pragma once

#include <cstddef>
#include <span>

#include <json.hpp>

#include "dxp/dataset.hpp"

namespace dxp {

/// Normalized confusion cells plus accumulated testing cost.
///
/// For empirical evaluations `n_episodes` counts episodes and `total_cost` sums their
/// cost; exact (oracle) tallies use `n_episodes == 1` and store the expected cost.
struct ConfusionTally {
    double tp = 0.0;
    double tn = 0.0;
    double fp = 0.0;
    double fn = 0.0;
    double total_cost = 0.0;
    std::size_t n_episodes = 0;

    double mean_cost() const noexcept {
        return n_episodes > 0 ? total_cost / static_cast<double>(n_episodes) : 0.0;
    }
    double positive_mass() const noexcept { return tp + fn; }

    /// Episode-weighted combination of two tallies; associative.
    ConfusionTally merged(const ConfusionTally& other) const;

    nlohmann::json to_json() const;
};

/// Integer accumulator for empirical episodes.
class ConfusionCounter {
public:
    void record(Label truth, Label predicted, double cost);
    ConfusionTally tally() const;
    std::size_t episodes() const noexcept { return tp_ + tn_ + fp_ + fn_; }

private:
    std::size_t tp_ = 0, tn_ = 0, fp_ = 0, fn_ = 0;
    double cost_ = 0.0;
};

/// 2·TP / (1 + TP − TN); 0 when there are no true positives.
double f1_score(const ConfusionTally& t);

/// ½(TPR + TNR). `class_ratio` is the healthy:ill ratio λ; the tally must satisfy
/// TP + FN = 1/(1+λ) within 1e-9.
double am_score(const ConfusionTally& t, double class_ratio);

/// AM evaluated through its linear form (1+λ)/(2λ)·(λ·TP + TN).
double am_linear(const ConfusionTally& t, double class_ratio);

/// Class ratio implied by the tally itself (TN+FP)/(TP+FN).
double implied_class_ratio(const ConfusionTally& t);

struct ScoredLabel {
    double score = 0.0;
    Label label = Label::Negative;
};

/// Mann–Whitney estimate of the area under the ROC curve; ties contribute ½.
double auroc(std::span<const ScoredLabel> scores);

}  // namespace dxp
