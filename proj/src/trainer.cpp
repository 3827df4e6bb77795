#include "dxp/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "dxp/error.hpp"

namespace dxp {

void SmDdpoConfig::validate() const {
    if (outer_loops < 1) throw ConfigError("trainer.outer_loops", "must be >= 1");
    if (policy_loops < 0) throw ConfigError("trainer.policy_loops", "must be >= 0");
    if (classifier_epochs < 1) throw ConfigError("trainer.classifier_epochs", "must be >= 1");
    if (pretrain_copies < 1 || pretrain_epochs < 0) throw ConfigError("trainer.pretrain", "copies >= 1, epochs >= 0");
}

nlohmann::json SmDdpoConfig::to_json() const {
    return {{"outer_loops", outer_loops},
            {"policy_loops", policy_loops},
            {"classifier_epochs", classifier_epochs},
            {"start", start == ClassifierStart::End2End ? "end2end" : "pretrained"},
            {"pretrain_copies", pretrain_copies},
            {"pretrain_epochs", pretrain_epochs}};
}

SmDdpoConfig SmDdpoConfig::from_json(const nlohmann::json& doc) {
    SmDdpoConfig c;
    c.outer_loops = doc.value("outer_loops", c.outer_loops);
    c.policy_loops = doc.value("policy_loops", c.policy_loops);
    c.classifier_epochs = doc.value("classifier_epochs", c.classifier_epochs);
    const auto start = doc.value("start", std::string("end2end"));
    if (start == "end2end") c.start = ClassifierStart::End2End;
    else if (start == "pretrained") c.start = ClassifierStart::Pretrained;
    else throw ConfigError("trainer.start", "expected 'end2end' or 'pretrained'");
    c.pretrain_copies = doc.value("pretrain_copies", c.pretrain_copies);
    c.pretrain_epochs = doc.value("pretrain_epochs", c.pretrain_epochs);
    return c;
}

void TrainingLog::write_csv(std::ostream& out) const {
    out << "loop,f1,am,auroc,mean_cost,ppo_loss,ce_loss\n";
    for (const auto& r : loops)
        out << r.loop << ',' << format_real(r.f1) << ',' << format_real(r.am) << ',' << format_real(r.auroc) << ','
            << format_real(r.mean_cost) << ',' << format_real(r.ppo_loss) << ',' << format_real(r.ce_loss) << '\n';
}

TrainingLog run_sm_ddpo(const TrainerInputs& in, Classifier& classifier, ActorCritic& policy, const PpoConfig& ppo,
                        const SmDdpoConfig& cfg, std::uint64_t seed,
                        const std::function<void(const LoopRecord&)>& on_loop) {
    cfg.validate();
    ppo.validate();
    if (!in.encoder || !in.train || !in.validation) throw ContractError("trainer inputs are incomplete");
    const int d = in.env.scheme.feature_count();
    EnvConfig train_cfg = in.env;
    train_cfg.reset_mode = ResetMode::Train;

    if (cfg.start == ClassifierStart::Pretrained) {
        const auto aug = random_mask_augment(*in.train, in.env.scheme, cfg.pretrain_copies, derive_seed(seed, 10));
        pretrain_classifier(classifier, *in.encoder, aug, cfg.pretrain_epochs, derive_seed(seed, 11));
    }

    Rng rollout_rng(derive_seed(seed, 1));
    Rng ppo_rng(derive_seed(seed, 2));
    Rng ce_rng(derive_seed(seed, 3));
    TrainingLog log;
    std::vector<RolloutStep> q;
    for (int loop = 1; loop <= cfg.outer_loops; ++loop) {
        auto snapshot = std::make_shared<const Classifier>(classifier);
        const auto tag = snapshot->version();
        DiagnosisEnv env(train_cfg, in.train, in.encoder, snapshot, derive_seed(seed, 1000 + static_cast<std::uint64_t>(loop)));

        q.clear();
        double ppo_loss = 0.0;
        const int cycles = std::max(cfg.policy_loops, 1);
        for (int j = 0; j < cycles; ++j) {
            auto batch = collect_rollouts(env, policy, ppo.timesteps, rollout_rng);
            if (cfg.policy_loops > 0) ppo_loss += ppo_update(policy, batch, ppo, ppo_rng).loss;
            q.insert(q.end(), std::make_move_iterator(batch.begin()), std::make_move_iterator(batch.end()));
        }
        if (cfg.policy_loops > 0) ppo_loss /= cfg.policy_loops;
        for (const auto& s : q)
            if (s.classifier_version != tag)
                throw TrainingError("loop " + std::to_string(loop) + ": rollout used a stale classifier snapshot");

        // Classifier inner loop on this loop's buffer only.
        const auto n = q.size();
        const auto bs = static_cast<std::size_t>(classifier.config().batch_size);
        const auto total_steps = (static_cast<std::size_t>(cfg.classifier_epochs) * n + bs - 1) / bs;
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::size_t cursor = n;
        double ce_loss = 0.0;
        for (std::size_t step = 0; step < total_steps; ++step) {
            const std::size_t len = std::min(bs, n);
            Eigen::MatrixXd xb(d, static_cast<Eigen::Index>(len));
            std::vector<Label> yb(len);
            for (std::size_t j = 0; j < len; ++j) {
                if (cursor == n) {
                    std::shuffle(order.begin(), order.end(), ce_rng);
                    cursor = 0;
                }
                const auto& s = q[order[cursor++]];
                xb.col(static_cast<Eigen::Index>(j)) = s.embedding.head(d);
                yb[j] = s.label;
            }
            ce_loss += classifier.train_step(xb, yb);
        }
        if (total_steps > 0) ce_loss /= static_cast<double>(total_steps);

        const auto report = evaluate_policy(policy, in.env, in.validation, in.encoder,
                                            std::make_shared<const Classifier>(classifier));
        LoopRecord rec{loop, report.f1, report.am, report.auroc, report.mean_cost, ppo_loss, ce_loss};
        if (!std::isfinite(rec.f1) || !std::isfinite(rec.mean_cost))
            throw TrainingError("loop " + std::to_string(loop) + ": validation metric is not finite");
        log.loops.push_back(rec);
        if (on_loop) on_loop(rec);
    }
    return log;
}

}  // namespace dxp
