#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "dxp/env.hpp"
#include "dxp/evaluate.hpp"
#include "dxp/ndgrad.hpp"

namespace dxp {

struct PpoConfig {
    double clip = 0.2;
    double value_coef = 0.5;
    double entropy_coef = 0.0;
    double gae_lambda = 0.95;
    int timesteps = 1024;
    int epochs = 10;
    int minibatch = 128;
    double learning_rate = 1e-4;
    double max_grad_norm = 0.5;
    bool normalize_advantages = true;
    int hidden = 128;
    bool shared_trunk = false;

    void validate() const;
    nlohmann::json to_json() const;
    static PpoConfig from_json(const nlohmann::json& doc);
};

/// Softmax restricted to valid actions; invalid entries are exactly 0.
Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits, std::span<const std::uint8_t> valid);

enum class ActMode { Sample, Greedy };

struct ActResult {
    int action = -1;
    double log_prob = 0.0;
    double value = 0.0;
};

struct RolloutStep {
    Eigen::VectorXd embedding;
    std::vector<std::uint8_t> valid;
    int action = -1;
    double log_prob = 0.0;
    double reward = 0.0;
    double value = 0.0;
    bool done = false;
    /// Episode's ground-truth label (filled when the episode ends).
    Label label = Label::Negative;
    std::uint64_t classifier_version = 0;
};

/// Actor and critic heads over the state embedding; either two networks or one shared
/// trunk whose last output is the value.
class ActorCritic : public DecisionPolicy {
public:
    ActorCritic() = default;
    ActorCritic(int embed_dim, int n_actions, const PpoConfig& cfg, std::uint64_t seed);

    int embed_dim() const { return actor_.input_dim(); }
    int action_count() const noexcept { return n_actions_; }
    bool shared() const noexcept { return shared_; }

    /// Flat view over actor then critic parameters (critic absent when shared).
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& flat);
    Eigen::Index parameter_count() const;

    /// Logits (n_actions × n) and values (n).
    void evaluate(const Eigen::MatrixXd& x, Eigen::MatrixXd& logits, Eigen::VectorXd& values) const;
    Eigen::VectorXd action_probs(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid) const;
    ActResult act(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid, ActMode mode, Rng& rng) const;
    int decide(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid) const override;

    /// Backward through a batched evaluate(): accumulates into flat `grad`.
    void backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dlogits, const Eigen::VectorXd& dvalues,
                  Eigen::VectorXd& grad) const;

    Adam& optimizer() noexcept { return adam_; }

    nlohmann::json to_json() const;
    static ActorCritic from_json(const nlohmann::json& doc);

private:
    DenseNet actor_;
    DenseNet critic_;
    int n_actions_ = 0;
    bool shared_ = false;
    Adam adam_;
};

struct Advantages {
    Eigen::VectorXd advantages;
    Eigen::VectorXd targets;
};

/// Episodic GAE with terminal bootstrap 0. Steps must end with a finished episode.
Advantages gae_advantages(std::span<const RolloutStep> steps, double gamma, double gae_lambda);

struct PpoLoss {
    double total = 0.0;     // minimized: −clip + c1·value − c2·entropy
    double surrogate = 0.0; // clipped surrogate (maximized)
    double value = 0.0;     // mean squared value error
    double entropy = 0.0;
    double clip_fraction = 0.0;
    Eigen::VectorXd grad;
};

/// PPO loss and gradient for the listed steps; `old_log_probs` come from the rollout policy.
PpoLoss ppo_loss(const ActorCritic& ac, std::span<const RolloutStep> steps, std::span<const std::size_t> batch,
                 const Eigen::VectorXd& advantages, const Eigen::VectorXd& targets, const PpoConfig& cfg);

struct PpoDiagnostics {
    double loss = 0.0;
    double surrogate = 0.0;
    double value = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    int minibatches = 0;
};

/// Epochs of shuffled minibatch Adam steps against the fixed rollout.
PpoDiagnostics ppo_update(ActorCritic& ac, std::span<const RolloutStep> steps, const PpoConfig& cfg, Rng& rng);

/// Collects at least `timesteps` steps, finishing the last episode.
std::vector<RolloutStep> collect_rollouts(DiagnosisEnv& env, const ActorCritic& ac, int timesteps, Rng& rng);

}  // namespace dxp
