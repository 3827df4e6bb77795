#include "dxp/env.hpp"

#include <cmath>

#include "dxp/error.hpp"

namespace dxp {

void ShapingParams::validate() const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw ConfigError("shaping.lambda", "must be finite and >= 0");
    if (!(rho <= 0.0) || !std::isfinite(rho)) throw ConfigError("shaping.rho", "must be finite and <= 0");
}

void EnvConfig::validate() const {
    shaping.validate();
    if (!(cost_unit > 0.0)) throw ConfigError("env.cost_unit", "must be positive");
    if (scheme.panel_count() < 1) throw ConfigError("env.scheme", "needs at least one panel");
}

double shaped_reward(const ShapingParams& shaping, double cost_unit, const PanelScheme& scheme, Label y, int action) {
    const int d = scheme.panel_count();
    if (action < 0 || action >= d + 2) throw InvalidActionError("action index out of range");
    if (action < d) return shaping.rho * scheme.panel(action).cost / cost_unit;
    if (action == d) return y == Label::Negative ? 1.0 : 0.0;
    return y == Label::Positive ? shaping.lambda : 0.0;
}

Eigen::VectorXd embed_state(const Encoder& encoder, const Classifier& classifier, const Eigen::VectorXd& masked,
                            const ObservationMask& mask) {
    const auto d = masked.size();
    Eigen::VectorXd out(2 * d + 2);
    const Eigen::VectorXd completed = encoder.impute(masked, mask);
    out.head(d) = completed;
    out.segment(d, 2) = classifier.predict_proba(completed);
    for (Eigen::Index i = 0; i < d; ++i) out[d + 2 + i] = mask[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    return out;
}

DiagnosisEnv::DiagnosisEnv(EnvConfig cfg, std::shared_ptr<const std::vector<PatientRecord>> pool,
                           std::shared_ptr<const Encoder> encoder, std::shared_ptr<const Classifier> classifier,
                           std::uint64_t seed)
    : cfg_(std::move(cfg)), pool_(std::move(pool)), encoder_(std::move(encoder)), classifier_(std::move(classifier)),
      rng_(seed) {
    cfg_.validate();
    if (!pool_ || pool_->empty()) throw ContractError("environment needs a nonempty record pool");
    if (!encoder_ || !classifier_) throw ContractError("environment needs encoder and classifier snapshots");
    if (encoder_->dim() != cfg_.scheme.feature_count() || classifier_->input_dim() != cfg_.scheme.feature_count())
        throw ContractError("encoder/classifier dimension does not match the panel scheme");
}

Eigen::VectorXd DiagnosisEnv::observe() {
    embedding_ = embed_state(*encoder_, *classifier_, masked_features(record().features, mask_), mask_);
    return embedding_;
}

Eigen::VectorXd DiagnosisEnv::reset() {
    std::uniform_int_distribution<std::size_t> pick(0, pool_->size() - 1);
    const std::size_t r = pick(rng_);
    ObservationMask m = ObservationMask::initial(cfg_.scheme);
    if (cfg_.reset_mode == ResetMode::Train)
        for (int k = 0; k < cfg_.scheme.panel_count(); ++k)
            if (coin(rng_)) m.observe_panel(cfg_.scheme, k);
    return reset_to(r, std::move(m));
}

Eigen::VectorXd DiagnosisEnv::reset_to(std::size_t r, ObservationMask m) {
    if (r >= pool_->size()) throw ContractError("record index out of range");
    if (m.size() != static_cast<std::size_t>(cfg_.scheme.feature_count()) || !m.is_panel_atomic(cfg_.scheme) ||
        !m.covers_visible(cfg_.scheme))
        throw ContractError("starting mask is not valid for the panel scheme");
    record_ = r;
    mask_ = std::move(m);
    episode_cost_ = 0.0;
    steps_ = 0;
    done_ = false;
    return observe();
}

std::vector<std::uint8_t> DiagnosisEnv::valid_actions() const {
    const int d = cfg_.scheme.panel_count();
    std::vector<std::uint8_t> v(static_cast<std::size_t>(d + 2), 1);
    for (int k = 0; k < d; ++k)
        if (mask_.panel_observed(cfg_.scheme, k)) v[static_cast<std::size_t>(k)] = 0;
    return v;
}

StepResult DiagnosisEnv::step(int action) {
    if (done_) throw ContractError("step called on a finished episode");
    const int d = cfg_.scheme.panel_count();
    if (action < 0 || action >= d + 2) throw InvalidActionError("action index out of range");
    if (action < d && mask_.panel_observed(cfg_.scheme, action))
        throw InvalidActionError("panel " + std::to_string(action) + " is already observed");
    const Label y = record().label;
    StepResult res;
    res.info.action = action;
    res.info.label = y;
    res.reward = shaped_reward(cfg_.shaping, cfg_.cost_unit, cfg_.scheme, y, action);
    ++steps_;
    if (action < d) {
        mask_.observe_panel(cfg_.scheme, action);
        res.info.cost = cfg_.scheme.panel(action).cost;
        episode_cost_ += res.info.cost;
        res.embedding = observe();
    } else {
        res.done = true;
        res.info.diagnosis = true;
        done_ = true;
    }
    if (steps_ > cfg_.step_cap()) throw ContractError("episode exceeded its step cap");
    return res;
}

}  // namespace dxp
