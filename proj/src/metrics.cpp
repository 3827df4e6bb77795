#include "dxp/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "dxp/error.hpp"

namespace dxp {

ConfusionTally ConfusionTally::merged(const ConfusionTally& other) const {
    const auto n = n_episodes + other.n_episodes;
    if (n == 0) return {};
    const double wa = static_cast<double>(n_episodes) / static_cast<double>(n);
    const double wb = static_cast<double>(other.n_episodes) / static_cast<double>(n);
    ConfusionTally out;
    out.tp = wa * tp + wb * other.tp;
    out.tn = wa * tn + wb * other.tn;
    out.fp = wa * fp + wb * other.fp;
    out.fn = wa * fn + wb * other.fn;
    out.total_cost = total_cost + other.total_cost;
    out.n_episodes = n;
    return out;
}

nlohmann::json ConfusionTally::to_json() const {
    return {{"tp", tp}, {"tn", tn}, {"fp", fp}, {"fn", fn}, {"mean_cost", mean_cost()}, {"n_episodes", n_episodes}};
}

void ConfusionCounter::record(Label truth, Label predicted, double cost) {
    if (is_positive(truth)) {
        ++(is_positive(predicted) ? tp_ : fn_);
    } else {
        ++(is_positive(predicted) ? fp_ : tn_);
    }
    cost_ += cost;
}

ConfusionTally ConfusionCounter::tally() const {
    ConfusionTally t;
    t.n_episodes = episodes();
    t.total_cost = cost_;
    if (t.n_episodes == 0) return t;
    const double n = static_cast<double>(t.n_episodes);
    t.tp = static_cast<double>(tp_) / n;
    t.tn = static_cast<double>(tn_) / n;
    t.fp = static_cast<double>(fp_) / n;
    t.fn = static_cast<double>(fn_) / n;
    return t;
}

double f1_score(const ConfusionTally& t) {
    if (t.tp <= 0.0) return 0.0;
    return 2.0 * t.tp / (1.0 + t.tp - t.tn);
}

double implied_class_ratio(const ConfusionTally& t) {
    const double pos = t.tp + t.fn;
    if (!(pos > 0.0)) throw UndefinedMetricError("tally has no positive mass");
    return (t.tn + t.fp) / pos;
}

double am_score(const ConfusionTally& t, double class_ratio) {
    if (!(class_ratio > 0.0)) throw ContractError("class_ratio must be positive");
    const double pos = t.tp + t.fn;
    if (std::abs(pos - 1.0 / (1.0 + class_ratio)) > 1e-9)
        throw ContractError("tally is inconsistent with the class ratio");
    const double neg = t.tn + t.fp;
    if (!(neg > 0.0)) throw UndefinedMetricError("tally has no negative mass");
    return 0.5 * (t.tp / pos + t.tn / neg);
}

double am_linear(const ConfusionTally& t, double class_ratio) {
    return (1.0 + class_ratio) / (2.0 * class_ratio) * (class_ratio * t.tp + t.tn);
}

double auroc(std::span<const ScoredLabel> scores) {
    std::size_t n_pos = 0;
    for (const auto& s : scores) n_pos += is_positive(s.label) ? 1 : 0;
    const std::size_t n_neg = scores.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) throw UndefinedMetricError("AUROC needs both classes");

    std::vector<ScoredLabel> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.score < b.score; });
    // Sum of midranks of positives (ties share the average rank).
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < sorted.size()) {
        std::size_t j = i;
        while (j < sorted.size() && sorted[j].score == sorted[i].score) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (is_positive(sorted[k].label)) rank_sum += midrank;
        i = j;
    }
    const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace dxp
