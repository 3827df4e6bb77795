#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/classifier.hpp"
#include "dxp/dataset.hpp"
#include "dxp/encoder.hpp"
#include "dxp/rng.hpp"

namespace dxp {

/// Weights of the scalarized objective TN + λ·TP + ρ·Cost.
struct ShapingParams {
    double lambda = 1.0;
    double rho = 0.0;

    void validate() const;
    bool operator==(const ShapingParams&) const = default;
};

enum class ResetMode { Train, Eval };

/// Actions 0..D-1 buy a panel; D predicts N; D+1 predicts P.
inline int action_count(const PanelScheme& s) { return s.panel_count() + 2; }
inline int action_negative(const PanelScheme& s) { return s.panel_count(); }
inline int action_positive(const PanelScheme& s) { return s.panel_count() + 1; }
inline bool is_diagnosis(const PanelScheme& s, int action) { return action >= s.panel_count(); }

struct EnvConfig {
    PanelScheme scheme;
    ShapingParams shaping;
    /// Panel prices are divided by this before being weighted by ρ.
    double cost_unit = 100.0;
    ResetMode reset_mode = ResetMode::Train;

    static constexpr double discount = 1.0;
    int step_cap() const { return scheme.panel_count() + 1; }
    void validate() const;
};

/// Reward of `action` for a patient with label `y` (purchase: ρ·c/cost_unit; P: λ·1{y=P}; N: 1{y=N}).
double shaped_reward(const ShapingParams& shaping, double cost_unit, const PanelScheme& scheme, Label y, int action);

/// Policy input (imputed x, classifier probabilities, mask); length 2d + 2.
Eigen::VectorXd embed_state(const Encoder& encoder, const Classifier& classifier, const Eigen::VectorXd& masked,
                            const ObservationMask& mask);

inline int embedding_dim(const PanelScheme& s) { return 2 * s.feature_count() + 2; }

struct StepInfo {
    int action = -1;
    double cost = 0.0;        // currency spent by this step
    Label label = Label::Negative;  // meaningful once done
    bool diagnosis = false;
};

struct StepResult {
    Eigen::VectorXd embedding;  // empty when done
    double reward = 0.0;
    bool done = false;
    StepInfo info;
};

/// One episodic diagnosis MDP over a shared record pool and frozen encoder/classifier snapshots.
class DiagnosisEnv {
public:
    DiagnosisEnv(EnvConfig cfg, std::shared_ptr<const std::vector<PatientRecord>> pool,
                 std::shared_ptr<const Encoder> encoder, std::shared_ptr<const Classifier> classifier, std::uint64_t seed);

    const EnvConfig& config() const noexcept { return cfg_; }
    const Classifier& classifier() const noexcept { return *classifier_; }
    std::size_t pool_size() const noexcept { return pool_->size(); }

    /// Random patient; mask per reset mode (train: each panel observed with prob 0.5).
    Eigen::VectorXd reset();
    /// Specific patient and starting mask.
    Eigen::VectorXd reset_to(std::size_t record, ObservationMask mask);

    StepResult step(int action);

    std::vector<std::uint8_t> valid_actions() const;
    const ObservationMask& mask() const noexcept { return mask_; }
    const PatientRecord& record() const { return (*pool_)[record_]; }
    std::size_t record_index() const noexcept { return record_; }
    double episode_cost() const noexcept { return episode_cost_; }
    int steps_taken() const noexcept { return steps_; }
    bool done() const noexcept { return done_; }
    /// Embedding of the current state.
    const Eigen::VectorXd& embedding() const noexcept { return embedding_; }

private:
    Eigen::VectorXd observe();

    EnvConfig cfg_;
    std::shared_ptr<const std::vector<PatientRecord>> pool_;
    std::shared_ptr<const Encoder> encoder_;
    std::shared_ptr<const Classifier> classifier_;
    Rng rng_;
    std::size_t record_ = 0;
    ObservationMask mask_;
    Eigen::VectorXd embedding_;
    double episode_cost_ = 0.0;
    int steps_ = 0;
    bool done_ = true;
};

}  // namespace dxp
