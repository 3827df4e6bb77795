#include <doctest.h>

#include <sstream>

#include "dxp/error.hpp"
#include "dxp/trainer.hpp"

using namespace dxp;

namespace {

struct SmallTask {
    TrainerInputs in;
    PpoConfig ppo;
    ClassifierConfig clf;

    SmallTask() {
        const auto data = generate_synthetic(SyntheticSpec::cheap_informative(3000), 1);
        SplitSpec ss;
        ss.seed = 1;
        const auto parts = split(data.records, ss);
        in.train = std::make_shared<const std::vector<PatientRecord>>(parts[SplitPart::RlTrain]);
        in.validation = std::make_shared<const std::vector<PatientRecord>>(parts[SplitPart::RlValidation]);
        FlowConfig fc;
        fc.depth = 0;
        in.encoder = std::make_shared<const Encoder>(Encoder::initial(4, fc, EmConfig{}, 2));
        in.env.scheme = data.scheme;
        in.env.shaping = {2.0, -0.1};
        ppo.hidden = 16;
        ppo.timesteps = 256;
        ppo.epochs = 2;
        ppo.minibatch = 64;
        ppo.learning_rate = 1e-3;
        clf.hidden = 16;
        clf.learning_rate = 1e-3;
    }

    TrainingLog run(const SmDdpoConfig& cfg, std::uint64_t seed, Classifier* out_clf = nullptr,
                    ActorCritic* out_policy = nullptr) const {
        Classifier c = Classifier::create(4, clf, derive_seed(seed, 8));
        ActorCritic p(embedding_dim(in.env.scheme), action_count(in.env.scheme), ppo, derive_seed(seed, 9));
        auto log = run_sm_ddpo(in, c, p, ppo, cfg, seed);
        if (out_clf) *out_clf = c;
        if (out_policy) *out_policy = p;
        return log;
    }
};

std::string csv(const TrainingLog& log) {
    std::ostringstream os;
    log.write_csv(os);
    return os.str();
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("no policy steps: policy untouched, classifier trained on the initial rollouts") {
    const SmallTask task;
    SmDdpoConfig cfg;
    cfg.outer_loops = 1;
    cfg.policy_loops = 0;
    cfg.classifier_epochs = 3;
    Classifier clf;
    ActorCritic pol;
    const auto log = task.run(cfg, 5, &clf, &pol);
    const ActorCritic fresh(embedding_dim(task.in.env.scheme), action_count(task.in.env.scheme), task.ppo, derive_seed(5, 9));
    CHECK(pol.parameters() == fresh.parameters());
    // One rollout batch of at least T steps, at most T + D steps.
    const auto bs = static_cast<std::uint64_t>(task.clf.batch_size);
    const auto lo = (3 * 256 + bs - 1) / bs;
    const auto hi = (3 * (256 + 2) + bs - 1) / bs;
    CHECK(clf.version() >= lo);
    CHECK(clf.version() <= hi);
    REQUIRE(log.loops.size() == 1);
    CHECK(log.loops[0].ppo_loss == 0.0);
}

TEST_CASE("same seed gives identical logs; the CSV has the expected header") {
    const SmallTask task;
    SmDdpoConfig cfg;
    cfg.outer_loops = 2;
    cfg.policy_loops = 2;
    cfg.classifier_epochs = 2;
    const auto a = csv(task.run(cfg, 7));
    const auto b = csv(task.run(cfg, 7));
    CHECK(a == b);
    CHECK(a.rfind("loop,f1,am,auroc,mean_cost,ppo_loss,ce_loss\n", 0) == 0);
    CHECK(std::count(a.begin(), a.end(), '\n') == 3);
    CHECK(csv(task.run(cfg, 8)) != a);
}

TEST_CASE("pretrained start and a few loops give nonzero validation F1") {
    SmallTask task;
    task.in.env.shaping = {12.0, -0.1};
    task.ppo.epochs = 4;
    SmDdpoConfig cfg;
    cfg.outer_loops = 3;
    cfg.policy_loops = 10;
    cfg.classifier_epochs = 4;
    cfg.start = ClassifierStart::Pretrained;
    std::vector<int> seen;
    Classifier c = Classifier::create(4, task.clf, 1);
    ActorCritic p(embedding_dim(task.in.env.scheme), action_count(task.in.env.scheme), task.ppo, 2);
    const auto log = run_sm_ddpo(task.in, c, p, task.ppo, cfg, 3, [&](const LoopRecord& r) { seen.push_back(r.loop); });
    CHECK(seen == std::vector<int>{1, 2, 3});
    CHECK(log.loops.back().f1 > 0.0);
}

TEST_CASE("config validation") {
    SmDdpoConfig cfg;
    cfg.outer_loops = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg.outer_loops = 1;
    cfg.classifier_epochs = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    SmDdpoConfig ok;
    ok.start = ClassifierStart::Pretrained;
    CHECK(SmDdpoConfig::from_json(ok.to_json()).to_json() == ok.to_json());
    CHECK_THROWS_AS(SmDdpoConfig::from_json({{"start", "warm"}}), ConfigError);
}

}  // TEST_SUITE
