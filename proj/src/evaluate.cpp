#include "dxp/evaluate.hpp"

#include <cmath>
#include <limits>

#include "dxp/error.hpp"

namespace dxp {

nlohmann::json EvalReport::to_json() const {
    auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    return {{"tally", tally.to_json()}, {"panel_rates", panel_rates}, {"f1", num(f1)},
            {"am", num(am)},           {"auroc", num(auroc)},        {"mean_cost", num(mean_cost)}};
}

EvalReport evaluate_policy(const DecisionPolicy& policy, const EnvConfig& cfg,
                           std::shared_ptr<const std::vector<PatientRecord>> records,
                           std::shared_ptr<const Encoder> encoder, std::shared_ptr<const Classifier> classifier) {
    EnvConfig eval_cfg = cfg;
    eval_cfg.reset_mode = ResetMode::Eval;
    DiagnosisEnv env(eval_cfg, records, std::move(encoder), std::move(classifier), 0);
    const auto& scheme = eval_cfg.scheme;
    const int d = scheme.feature_count();

    ConfusionCounter counter;
    std::vector<double> bought(static_cast<std::size_t>(scheme.panel_count()), 0.0);
    std::vector<ScoredLabel> scores;
    scores.reserve(records->size());
    for (std::size_t r = 0; r < records->size(); ++r) {
        Eigen::VectorXd emb = env.reset_to(r, ObservationMask::initial(scheme));
        while (true) {
            const int a = policy.decide(emb, env.valid_actions());
            const auto res = env.step(a);
            if (res.done) {
                const Label pred = a == action_positive(scheme) ? Label::Positive : Label::Negative;
                counter.record(res.info.label, pred, env.episode_cost());
                scores.push_back({emb[d + 1], res.info.label});
                break;
            }
            bought[static_cast<std::size_t>(a)] += 1.0;
            emb = res.embedding;
        }
    }

    EvalReport rep;
    rep.tally = counter.tally();
    rep.mean_cost = rep.tally.mean_cost();
    rep.f1 = f1_score(rep.tally);
    const double n = static_cast<double>(records->size());
    for (auto& b : bought) b /= n;
    rep.panel_rates = std::move(bought);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const double pos = rep.tally.tp + rep.tally.fn;
    if (pos > 0.0 && pos < 1.0) {
        rep.am = am_score(rep.tally, (1.0 - pos) / pos);
        rep.auroc = auroc(scores);
    } else {
        rep.am = nan;
        rep.auroc = nan;
    }
    return rep;
}

}  // namespace dxp
