#include <doctest.h>

#include <cmath>

#include "dxp/error.hpp"
#include "dxp/policy.hpp"
#include "support.hpp"

using namespace dxp;

namespace {

constexpr int kActions = 4;  // two panels + N + P
const std::vector<std::uint8_t> kDiagnosisOnly{0, 0, 1, 1};

RolloutStep make_step(double reward, double value, bool done) {
    RolloutStep s;
    s.reward = reward;
    s.value = value;
    s.done = done;
    return s;
}

// One-step episodes on a fixed embedding where only the two diagnosis actions are valid.
std::vector<RolloutStep> bandit_rollout(const ActorCritic& ac, const Eigen::VectorXd& emb, const Eigen::Vector2d& rewards,
                                        int n, Rng& rng) {
    std::vector<RolloutStep> out;
    for (int i = 0; i < n; ++i) {
        const auto r = ac.act(emb, kDiagnosisOnly, ActMode::Sample, rng);
        RolloutStep s;
        s.embedding = emb;
        s.valid = kDiagnosisOnly;
        s.action = r.action;
        s.log_prob = r.log_prob;
        s.value = r.value;
        s.reward = rewards[r.action - 2];
        s.done = true;
        out.push_back(std::move(s));
    }
    return out;
}

std::vector<RolloutStep> random_batch(const ActorCritic& ac, int n, Rng& rng) {
    std::vector<RolloutStep> out;
    for (int i = 0; i < n; ++i) {
        RolloutStep s;
        s.embedding = Eigen::VectorXd::Random(ac.embed_dim());
        s.valid = {static_cast<std::uint8_t>(coin(rng)), static_cast<std::uint8_t>(coin(rng)), 1, 1};
        const auto r = ac.act(s.embedding, s.valid, ActMode::Sample, rng);
        s.action = r.action;
        s.log_prob = r.log_prob;
        s.value = r.value;
        s.done = true;
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("masked softmax") {
    const Eigen::Vector4d logits(3.0, -1.0, 0.5, 0.5);
    const auto p = masked_softmax(logits, kDiagnosisOnly);
    CHECK(p[0] == 0.0);
    CHECK(p[1] == 0.0);
    CHECK(p[2] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(std::abs(p.sum() - 1.0) < 1e-12);
    const std::vector<std::uint8_t> none{0, 0, 0, 0};
    CHECK_THROWS_AS(masked_softmax(logits, none), ContractError);
    const auto big = masked_softmax(Eigen::Vector4d(1000.0, 999.0, 0.0, 0.0), std::vector<std::uint8_t>{1, 1, 1, 1});
    CHECK(big[0] == doctest::Approx(1.0 / (1.0 + std::exp(-1.0))).epsilon(1e-12));
}

TEST_CASE("act: equal logits split evenly and masked actions never appear") {
    ActorCritic ac(6, kActions, PpoConfig{}, 1);
    Eigen::VectorXd theta = ac.parameters();
    theta.setZero();
    ac.set_parameters(theta);
    Rng rng(2);
    const Eigen::VectorXd emb = Eigen::VectorXd::Random(6);
    const int n = 100000;
    int positive = 0;
    for (int i = 0; i < n; ++i) {
        const auto r = ac.act(emb, kDiagnosisOnly, ActMode::Sample, rng);
        REQUIRE(r.action >= 2);
        positive += r.action == 3;
        CHECK(r.log_prob == doctest::Approx(std::log(0.5)));
    }
    CHECK(std::abs(positive - n / 2) <= 3.0 * std::sqrt(n * 0.25));

    ActorCritic trained(6, kActions, PpoConfig{}, 3);
    const std::vector<std::uint8_t> one_panel{0, 1, 1, 1};
    for (int i = 0; i < n; ++i) CHECK(trained.act(emb, one_panel, ActMode::Sample, rng).action != 0);
    const int g = trained.act(emb, one_panel, ActMode::Greedy, rng).action;
    for (int i = 0; i < 100; ++i) CHECK(trained.act(emb, one_panel, ActMode::Greedy, rng).action == g);
    CHECK(trained.decide(emb, one_panel) == g);
}

TEST_CASE("gae: telescoping, zeros, hand recursion") {
    std::vector<RolloutStep> ep{make_step(0.1, 0.5, false), make_step(-0.2, 0.3, false), make_step(1.0, 0.7, true)};
    const auto one = gae_advantages(ep, 1.0, 1.0);
    CHECK(one.advantages[0] == doctest::Approx(0.9 - 0.5).epsilon(1e-14));
    CHECK(one.advantages[1] == doctest::Approx(0.8 - 0.3).epsilon(1e-14));
    CHECK(one.advantages[2] == doctest::Approx(1.0 - 0.7).epsilon(1e-14));

    const auto h = gae_advantages(ep, 1.0, 0.95);
    const double a2 = 1.0 - 0.7;
    const double a1 = (-0.2 + 0.7 - 0.3) + 0.95 * a2;
    const double a0 = (0.1 + 0.3 - 0.5) + 0.95 * a1;
    CHECK(std::abs(h.advantages[0] - a0) < 1e-12);
    CHECK(std::abs(h.advantages[1] - a1) < 1e-12);
    CHECK(std::abs(h.advantages[2] - a2) < 1e-12);
    CHECK(std::abs(h.targets[0] - (a0 + 0.5)) < 1e-12);

    // A second episode must not bleed into the first.
    auto two = ep;
    two.push_back(make_step(5.0, 0.0, true));
    const auto h2 = gae_advantages(two, 1.0, 0.95);
    CHECK(h2.advantages.head(3) == h.advantages);
    CHECK(h2.advantages[3] == 5.0);

    std::vector<RolloutStep> zeros(5, make_step(0.0, 0.0, false));
    zeros.back().done = true;
    zeros[1].done = true;
    CHECK(gae_advantages(zeros, 1.0, 0.95).advantages.isZero(0.0));
    std::vector<RolloutStep> open{make_step(1.0, 0.0, false)};
    CHECK_THROWS_AS(gae_advantages(open, 1.0, 0.95), ContractError);
}

TEST_CASE("clipped surrogate arithmetic") {
    PpoConfig cfg;
    cfg.hidden = 8;
    ActorCritic ac(3, kActions, cfg, 4);
    RolloutStep s;
    s.embedding = Eigen::Vector3d(0.1, 0.2, 0.3);
    s.valid = {1, 1, 1, 1};
    s.action = 2;
    s.done = true;
    const double logp = std::log(ac.action_probs(s.embedding, s.valid)[2]);
    s.log_prob = logp - std::log(1.5);  // ratio 1.5
    const std::vector<RolloutStep> steps{s};
    const std::vector<std::size_t> idx{0};
    const auto l = ppo_loss(ac, steps, idx, Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), cfg);
    CHECK(l.surrogate == doctest::Approx(1.2).epsilon(1e-12));
    CHECK(l.clip_fraction == 1.0);
    const auto neg = ppo_loss(ac, steps, idx, -Eigen::VectorXd::Ones(1), Eigen::VectorXd::Zero(1), cfg);
    CHECK(neg.surrogate == doctest::Approx(-1.5).epsilon(1e-12));
}

TEST_CASE("at ratio 1 the clipped gradient is the vanilla policy gradient") {
    PpoConfig cfg;
    cfg.hidden = 8;
    cfg.value_coef = 0.0;
    cfg.entropy_coef = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        ActorCritic ac(3, kActions, cfg, seed);
        Rng rng(seed + 100);
        const auto steps = random_batch(ac, 12, rng);
        const Eigen::VectorXd adv = Eigen::VectorXd::Random(12);
        std::vector<std::size_t> idx(12);
        for (std::size_t i = 0; i < 12; ++i) idx[i] = i;
        const auto l = ppo_loss(ac, steps, idx, adv, Eigen::VectorXd::Zero(12), cfg);
        auto pg = [&](const Eigen::VectorXd& p) {
            ActorCritic c = ac;
            c.set_parameters(p);
            double s = 0.0;
            for (std::size_t i = 0; i < 12; ++i)
                s += adv[static_cast<Eigen::Index>(i)] * std::log(c.action_probs(steps[i].embedding, steps[i].valid)[steps[i].action]);
            return s / 12.0;
        };
        const Eigen::VectorXd oracle = testing::numeric_gradient(pg, ac.parameters(), 1e-6);
        CHECK(testing::relative_error(-l.grad, oracle) < 1e-6);

        // Score-function adjoint d log pi(a) / d logits = e_a - pi, pushed through the network directly.
        Eigen::MatrixXd x(3, 12), dlogits = Eigen::MatrixXd::Zero(kActions, 12);
        for (std::size_t i = 0; i < 12; ++i) {
            const auto col = static_cast<Eigen::Index>(i);
            x.col(col) = steps[i].embedding;
            const Eigen::VectorXd pi = ac.action_probs(steps[i].embedding, steps[i].valid);
            Eigen::VectorXd score = -pi;
            score[steps[i].action] += 1.0;
            dlogits.col(col) = -adv[col] / 12.0 * score;
        }
        Eigen::VectorXd exact = Eigen::VectorXd::Zero(ac.parameter_count());
        ac.backward(x, dlogits, Eigen::VectorXd::Zero(12), exact);
        CHECK((l.grad - exact).cwiseAbs().maxCoeff() < 1e-9 * (1.0 + exact.cwiseAbs().maxCoeff()));
    }
}

TEST_CASE("loss gradient matches finite differences with all terms on") {
    PpoConfig cfg;
    cfg.hidden = 6;
    cfg.entropy_coef = 0.3;
    for (bool shared : {false, true}) {
        cfg.shared_trunk = shared;
        ActorCritic ac(3, kActions, cfg, 9);
        Rng rng(10);
        auto steps = random_batch(ac, 8, rng);
        // Move the parameters so ratios differ from 1 and some samples clip.
        Eigen::VectorXd theta = ac.parameters() + 0.3 * Eigen::VectorXd::Random(ac.parameter_count());
        ac.set_parameters(theta);
        const Eigen::VectorXd adv = Eigen::VectorXd::Random(8), tgt = Eigen::VectorXd::Random(8);
        std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5, 6, 7};
        const auto l = ppo_loss(ac, steps, idx, adv, tgt, cfg);
        auto f = [&](const Eigen::VectorXd& p) {
            ActorCritic c = ac;
            c.set_parameters(p);
            return ppo_loss(c, steps, idx, adv, tgt, cfg).total;
        };
        CHECK(testing::relative_error(l.grad, testing::numeric_gradient(f, theta, 1e-6)) < 1e-4);
    }
}

TEST_CASE("masked action logits receive zero gradient") {
    PpoConfig cfg;
    cfg.hidden = 8;
    cfg.shared_trunk = true;  // output biases sit at the end of the flat vector
    cfg.entropy_coef = 0.5;
    ActorCritic ac(3, kActions, cfg, 5);
    Rng rng(6);
    auto steps = random_batch(ac, 20, rng);
    for (auto& s : steps) s.valid = {0, 1, 1, 1};
    for (auto& s : steps) s.action = std::max(s.action, 1);
    std::vector<std::size_t> idx(20);
    for (std::size_t i = 0; i < 20; ++i) idx[i] = i;
    const auto l = ppo_loss(ac, steps, idx, Eigen::VectorXd::Random(20), Eigen::VectorXd::Random(20), cfg);
    const Eigen::Index bias0 = ac.parameter_count() - (kActions + 1);
    CHECK(l.grad[bias0] == 0.0);
    CHECK(l.grad[bias0 + 1] != 0.0);
}

TEST_CASE("bandit: monotone improvement without value or entropy terms") {
    PpoConfig cfg;
    cfg.value_coef = 0.0;
    cfg.entropy_coef = 0.0;
    cfg.hidden = 32;
    cfg.timesteps = 128;
    cfg.learning_rate = 1e-3;
    ActorCritic ac(4, kActions, cfg, 7);
    Rng rng(8);
    const Eigen::VectorXd emb = Eigen::VectorXd::Ones(4);
    double prev = ac.action_probs(emb, kDiagnosisOnly)[3];
    for (int u = 0; u < 50; ++u) {
        const auto batch = bandit_rollout(ac, emb, Eigen::Vector2d(0.0, 1.0), cfg.timesteps, rng);
        ppo_update(ac, batch, cfg, rng);
        const double p = ac.action_probs(emb, kDiagnosisOnly)[3];
        CHECK(p >= prev - 1e-6);  // Adam noise once saturated
        prev = p;
    }
    CHECK(prev > 0.9);
}

TEST_CASE("bandit: default config reaches 0.99 on the better arm within 200 updates") {
    const PpoConfig cfg;
    ActorCritic ac(4, kActions, cfg, 11);
    Rng rng(12);
    const Eigen::VectorXd emb = Eigen::VectorXd::Ones(4);
    int updates = 0;
    while (updates < 200 && ac.action_probs(emb, kDiagnosisOnly)[2] < 0.99) {
        const auto batch = bandit_rollout(ac, emb, Eigen::Vector2d(1.0, 0.0), cfg.timesteps, rng);
        ppo_update(ac, batch, cfg, rng);
        ++updates;
    }
    MESSAGE("updates needed: " << updates);
    CHECK(ac.action_probs(emb, kDiagnosisOnly)[2] >= 0.99);
}

TEST_CASE("strong entropy bonus keeps the policy near uniform") {
    PpoConfig cfg;
    cfg.entropy_coef = 10.0;
    cfg.timesteps = 128;
    cfg.hidden = 32;
    cfg.learning_rate = 1e-3;
    ActorCritic ac(4, kActions, cfg, 13);
    // Start from a skewed policy.
    Eigen::VectorXd theta = ac.parameters() + 0.5 * Eigen::VectorXd::Random(ac.parameter_count());
    ac.set_parameters(theta);
    Rng rng(14);
    const std::vector<std::uint8_t> all{1, 1, 1, 1};
    const Eigen::VectorXd emb = Eigen::VectorXd::Ones(4);
    for (int u = 0; u < 100; ++u) {
        std::vector<RolloutStep> batch;
        for (int i = 0; i < cfg.timesteps; ++i) {
            const auto r = ac.act(emb, all, ActMode::Sample, rng);
            RolloutStep s;
            s.embedding = emb;
            s.valid = all;
            s.action = r.action;
            s.log_prob = r.log_prob;
            s.value = r.value;
            s.done = true;
            batch.push_back(std::move(s));
        }
        ppo_update(ac, batch, cfg, rng);
    }
    const auto p = ac.action_probs(emb, all);
    CHECK(0.5 * (p.array() - 0.25).abs().sum() < 0.05);
}

TEST_CASE("rollouts are complete episodes stamped with the classifier version") {
    auto pool = std::make_shared<std::vector<PatientRecord>>();
    Rng rng(1);
    for (int i = 0; i < 30; ++i)
        pool->push_back({{uniform01(rng), uniform01(rng)}, {0, 0}, coin(rng, 0.3) ? Label::Positive : Label::Negative, ""});
    EnvConfig cfg;
    cfg.scheme = PanelScheme({"a", "b"}, {Panel{"A", 5.0, {0}}, Panel{"B", 7.0, {1}}}, {});
    auto enc = std::make_shared<const Encoder>(Encoder::initial(2, FlowConfig{}, EmConfig{}, 1));
    Classifier clf = Classifier::create(2, ClassifierConfig{}, 2);
    clf.train_step(Eigen::MatrixXd::Zero(2, 1), std::vector<Label>{Label::Positive});
    DiagnosisEnv env(cfg, pool, enc, std::make_shared<const Classifier>(clf), 3);
    PpoConfig pc;
    pc.hidden = 8;
    ActorCritic ac(embedding_dim(cfg.scheme), action_count(cfg.scheme), pc, 4);
    const auto steps = collect_rollouts(env, ac, 50, rng);
    CHECK(steps.size() >= 50);
    CHECK(steps.back().done);
    int run = 0;
    for (const auto& s : steps) {
        CHECK(s.classifier_version == 1);
        CHECK(s.valid[static_cast<std::size_t>(s.action)] == 1);
        run = s.done ? 0 : run + 1;
        CHECK(run <= cfg.step_cap());
    }
}

TEST_CASE("config validation and checkpoint round trip") {
    PpoConfig bad;
    bad.clip = 1.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    PpoConfig cfg;
    cfg.hidden = 8;
    const ActorCritic ac(5, kActions, cfg, 3);
    const auto back = ActorCritic::from_json(nlohmann::json::parse(ac.to_json().dump()));
    CHECK(back.parameters() == ac.parameters());
    CHECK(PpoConfig::from_json(cfg.to_json()).to_json() == cfg.to_json());
}

}  // TEST_SUITE
