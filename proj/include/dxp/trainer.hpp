#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <vector>

#include <json.hpp>

#include "dxp/classifier.hpp"
#include "dxp/env.hpp"
#include "dxp/evaluate.hpp"
#include "dxp/policy.hpp"

namespace dxp {

enum class ClassifierStart { End2End, Pretrained };

struct SmDdpoConfig {
    int outer_loops = 100;
    /// PPO update cycles per outer loop. 0 still collects one rollout batch for the
    /// classifier but leaves the policy untouched.
    int policy_loops = 10;
    /// Classifier passes over the loop's buffer; steps = ceil(epochs·|Q| / batch).
    int classifier_epochs = 6;
    ClassifierStart start = ClassifierStart::End2End;
    /// Pretrained start: random-mask copies per record and epochs over them.
    int pretrain_copies = 2;
    int pretrain_epochs = 5;

    void validate() const;
    nlohmann::json to_json() const;
    static SmDdpoConfig from_json(const nlohmann::json& doc);
};

struct LoopRecord {
    int loop = 0;
    double f1 = 0.0;
    double am = 0.0;
    double auroc = 0.0;
    double mean_cost = 0.0;
    double ppo_loss = 0.0;
    double ce_loss = 0.0;
};

struct TrainingLog {
    std::vector<LoopRecord> loops;
    void write_csv(std::ostream& out) const;
};

struct TrainerInputs {
    std::shared_ptr<const Encoder> encoder;
    std::shared_ptr<const std::vector<PatientRecord>> train;
    std::shared_ptr<const std::vector<PatientRecord>> validation;
    EnvConfig env;
};

/// Alternates PPO cycles and classifier training against a classifier snapshot that is
/// refrozen at the start of every outer loop. The buffer is cleared each loop.
TrainingLog run_sm_ddpo(const TrainerInputs& in, Classifier& classifier, ActorCritic& policy, const PpoConfig& ppo,
                        const SmDdpoConfig& cfg, std::uint64_t seed,
                        const std::function<void(const LoopRecord&)>& on_loop = {});

}  // namespace dxp
