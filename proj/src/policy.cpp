#include "dxp/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "dxp/error.hpp"

namespace dxp {

void PpoConfig::validate() const {
    if (!(clip > 0.0 && clip < 1.0)) throw ConfigError("policy.clip", "must lie in (0,1)");
    if (!(value_coef >= 0.0)) throw ConfigError("policy.value_coef", "must be >= 0");
    if (!(entropy_coef >= 0.0)) throw ConfigError("policy.entropy_coef", "must be >= 0");
    if (!(gae_lambda >= 0.0 && gae_lambda <= 1.0)) throw ConfigError("policy.gae_lambda", "must lie in [0,1]");
    if (timesteps < 1) throw ConfigError("policy.timesteps", "must be >= 1");
    if (epochs < 1) throw ConfigError("policy.epochs", "must be >= 1");
    if (minibatch < 1) throw ConfigError("policy.minibatch", "must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("policy.learning_rate", "must be >= 0");
    if (hidden < 1) throw ConfigError("policy.hidden", "must be >= 1");
}

nlohmann::json PpoConfig::to_json() const {
    return {{"clip", clip},
            {"value_coef", value_coef},
            {"entropy_coef", entropy_coef},
            {"gae_lambda", gae_lambda},
            {"timesteps", timesteps},
            {"epochs", epochs},
            {"minibatch", minibatch},
            {"learning_rate", learning_rate},
            {"max_grad_norm", max_grad_norm},
            {"normalize_advantages", normalize_advantages},
            {"hidden", hidden},
            {"shared_trunk", shared_trunk}};
}

PpoConfig PpoConfig::from_json(const nlohmann::json& doc) {
    PpoConfig c;
    c.clip = doc.value("clip", c.clip);
    c.value_coef = doc.value("value_coef", c.value_coef);
    c.entropy_coef = doc.value("entropy_coef", c.entropy_coef);
    c.gae_lambda = doc.value("gae_lambda", c.gae_lambda);
    c.timesteps = doc.value("timesteps", c.timesteps);
    c.epochs = doc.value("epochs", c.epochs);
    c.minibatch = doc.value("minibatch", c.minibatch);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.max_grad_norm = doc.value("max_grad_norm", c.max_grad_norm);
    c.normalize_advantages = doc.value("normalize_advantages", c.normalize_advantages);
    c.hidden = doc.value("hidden", c.hidden);
    c.shared_trunk = doc.value("shared_trunk", c.shared_trunk);
    return c;
}

Eigen::VectorXd masked_softmax(const Eigen::VectorXd& logits, std::span<const std::uint8_t> valid) {
    if (valid.size() != static_cast<std::size_t>(logits.size())) throw ContractError("mask length differs from logits");
    double m = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < logits.size(); ++j)
        if (valid[static_cast<std::size_t>(j)]) m = std::max(m, logits[j]);
    if (!std::isfinite(m)) throw ContractError("no valid action");
    Eigen::VectorXd p = Eigen::VectorXd::Zero(logits.size());
    double z = 0.0;
    for (Eigen::Index j = 0; j < logits.size(); ++j)
        if (valid[static_cast<std::size_t>(j)]) z += (p[j] = std::exp(logits[j] - m));
    return p / z;
}

// ---------------------------------------------------------------------------

ActorCritic::ActorCritic(int embed_dim, int n_actions, const PpoConfig& cfg, std::uint64_t seed)
    : n_actions_(n_actions), shared_(cfg.shared_trunk) {
    cfg.validate();
    Rng rng(seed);
    if (shared_) {
        actor_ = DenseNet({embed_dim, cfg.hidden, cfg.hidden, n_actions + 1}, Activation::Relu, rng, 0.01);
    } else {
        actor_ = DenseNet({embed_dim, cfg.hidden, cfg.hidden, n_actions}, Activation::Relu, rng, 0.01);
        critic_ = DenseNet({embed_dim, cfg.hidden, cfg.hidden, 1}, Activation::Relu, rng, 1.0);
    }
    adam_ = Adam(parameter_count());
}

Eigen::Index ActorCritic::parameter_count() const {
    return actor_.parameter_count() + (shared_ ? 0 : critic_.parameter_count());
}

Eigen::VectorXd ActorCritic::parameters() const {
    Eigen::VectorXd flat(parameter_count());
    flat.head(actor_.parameter_count()) = actor_.parameters();
    if (!shared_) flat.tail(critic_.parameter_count()) = critic_.parameters();
    return flat;
}

void ActorCritic::set_parameters(const Eigen::VectorXd& flat) {
    if (flat.size() != parameter_count()) throw ContractError("policy parameter vector has wrong size");
    actor_.parameters() = flat.head(actor_.parameter_count());
    if (!shared_) critic_.parameters() = flat.tail(critic_.parameter_count());
}

void ActorCritic::evaluate(const Eigen::MatrixXd& x, Eigen::MatrixXd& logits, Eigen::VectorXd& values) const {
    if (shared_) {
        const Eigen::MatrixXd out = actor_.forward(x);
        logits = out.topRows(n_actions_);
        values = out.row(n_actions_).transpose();
    } else {
        logits = actor_.forward(x);
        values = critic_.forward(x).row(0).transpose();
    }
}

void ActorCritic::backward(const Eigen::MatrixXd& x, const Eigen::MatrixXd& dlogits, const Eigen::VectorXd& dvalues,
                           Eigen::VectorXd& grad) const {
    if (grad.size() == 0) grad = Eigen::VectorXd::Zero(parameter_count());
    GradTape tape;
    if (shared_) {
        actor_.forward(x, tape);
        Eigen::MatrixXd dout(n_actions_ + 1, x.cols());
        dout.topRows(n_actions_) = dlogits;
        dout.row(n_actions_) = dvalues.transpose();
        Eigen::VectorXd g = Eigen::VectorXd::Zero(actor_.parameter_count());
        actor_.backward(tape, dout, g);
        grad += g;
        return;
    }
    Eigen::VectorXd ga = Eigen::VectorXd::Zero(actor_.parameter_count());
    actor_.forward(x, tape);
    actor_.backward(tape, dlogits, ga);
    GradTape ctape;
    Eigen::VectorXd gc = Eigen::VectorXd::Zero(critic_.parameter_count());
    critic_.forward(x, ctape);
    critic_.backward(ctape, dvalues.transpose(), gc);
    grad.head(ga.size()) += ga;
    grad.tail(gc.size()) += gc;
}

Eigen::VectorXd ActorCritic::action_probs(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid) const {
    Eigen::MatrixXd logits;
    Eigen::VectorXd values;
    evaluate(embedding, logits, values);
    return masked_softmax(logits.col(0), valid);
}

ActResult ActorCritic::act(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid, ActMode mode,
                           Rng& rng) const {
    Eigen::MatrixXd logits;
    Eigen::VectorXd values;
    evaluate(embedding, logits, values);
    const Eigen::VectorXd p = masked_softmax(logits.col(0), valid);
    ActResult r;
    r.value = values[0];
    if (mode == ActMode::Greedy) {
        Eigen::Index best = -1;
        for (Eigen::Index j = 0; j < p.size(); ++j)
            if (valid[static_cast<std::size_t>(j)] && (best < 0 || p[j] > p[best])) best = j;
        r.action = static_cast<int>(best);
    } else {
        const double u = uniform01(rng);
        double acc = 0.0;
        for (Eigen::Index j = 0; j < p.size(); ++j) {
            if (!valid[static_cast<std::size_t>(j)]) continue;
            acc += p[j];
            r.action = static_cast<int>(j);
            if (u < acc) break;
        }
    }
    r.log_prob = std::log(p[r.action]);
    return r;
}

int ActorCritic::decide(const Eigen::VectorXd& embedding, std::span<const std::uint8_t> valid) const {
    const Eigen::VectorXd p = action_probs(embedding, valid);
    Eigen::Index best = -1;
    for (Eigen::Index j = 0; j < p.size(); ++j)
        if (valid[static_cast<std::size_t>(j)] && (best < 0 || p[j] > p[best])) best = j;
    return static_cast<int>(best);
}

nlohmann::json ActorCritic::to_json() const {
    nlohmann::json doc = {{"format", "dxp-policy"}, {"version", 1}, {"actions", n_actions_}, {"shared", shared_},
                          {"actor", actor_.to_json()}};
    if (!shared_) doc["critic"] = critic_.to_json();
    return doc;
}

ActorCritic ActorCritic::from_json(const nlohmann::json& doc) {
    try {
        if (doc.at("format") != "dxp-policy" || doc.at("version") != 1) throw SchemaError("unsupported policy checkpoint");
        ActorCritic ac;
        ac.n_actions_ = doc.at("actions").get<int>();
        ac.shared_ = doc.at("shared").get<bool>();
        ac.actor_ = DenseNet::from_json(doc.at("actor"));
        if (!ac.shared_) ac.critic_ = DenseNet::from_json(doc.at("critic"));
        ac.adam_ = Adam(ac.parameter_count());
        return ac;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("policy checkpoint: ") + e.what());
    }
}

// ---------------------------------------------------------------------------

Advantages gae_advantages(std::span<const RolloutStep> steps, double gamma, double gae_lambda) {
    const auto n = static_cast<Eigen::Index>(steps.size());
    if (n > 0 && !steps.back().done) throw ContractError("rollout does not end with a finished episode");
    Advantages out{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    double gae = 0.0;
    double next_value = 0.0;
    for (Eigen::Index t = n - 1; t >= 0; --t) {
        const auto& s = steps[static_cast<std::size_t>(t)];
        if (s.done) {
            gae = 0.0;
            next_value = 0.0;
        }
        const double delta = s.reward + gamma * next_value - s.value;
        gae = delta + gamma * gae_lambda * gae;
        out.advantages[t] = gae;
        out.targets[t] = gae + s.value;
        next_value = s.value;
    }
    return out;
}

PpoLoss ppo_loss(const ActorCritic& ac, std::span<const RolloutStep> steps, std::span<const std::size_t> batch,
                 const Eigen::VectorXd& advantages, const Eigen::VectorXd& targets, const PpoConfig& cfg) {
    const auto b = static_cast<Eigen::Index>(batch.size());
    if (b == 0) throw ContractError("empty PPO minibatch");
    Eigen::MatrixXd x(ac.embed_dim(), b);
    for (Eigen::Index j = 0; j < b; ++j) x.col(j) = steps[batch[static_cast<std::size_t>(j)]].embedding;
    Eigen::MatrixXd logits;
    Eigen::VectorXd values;
    ac.evaluate(x, logits, values);

    PpoLoss out;
    Eigen::MatrixXd dlogits = Eigen::MatrixXd::Zero(logits.rows(), b);
    Eigen::VectorXd dvalues(b);
    const double inv_b = 1.0 / static_cast<double>(b);
    int clipped = 0;
    for (Eigen::Index j = 0; j < b; ++j) {
        const std::size_t i = batch[static_cast<std::size_t>(j)];
        const auto& s = steps[i];
        const Eigen::VectorXd p = masked_softmax(logits.col(j), s.valid);
        const double logp = std::log(p[s.action]);
        const double ratio = std::exp(logp - s.log_prob);
        if (!std::isfinite(ratio)) throw NumericError("non-finite probability ratio");
        const double a = advantages[static_cast<Eigen::Index>(i)];
        const double unclipped = ratio * a;
        const double clipped_obj = std::clamp(ratio, 1.0 - cfg.clip, 1.0 + cfg.clip) * a;
        out.surrogate += std::min(unclipped, clipped_obj);
        if (std::abs(ratio - 1.0) > cfg.clip) ++clipped;
        const double dsurr_dlogp = clipped_obj < unclipped ? 0.0 : ratio * a;

        double h = 0.0;
        for (Eigen::Index k = 0; k < p.size(); ++k)
            if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
        out.entropy += h;

        for (Eigen::Index k = 0; k < p.size(); ++k) {
            if (!s.valid[static_cast<std::size_t>(k)] || p[k] <= 0.0) continue;
            const double dlogp = (k == s.action ? 1.0 : 0.0) - p[k];
            dlogits(k, j) = (-dsurr_dlogp * dlogp + cfg.entropy_coef * p[k] * (std::log(p[k]) + h)) * inv_b;
        }
        const double err = values[j] - targets[static_cast<Eigen::Index>(i)];
        out.value += err * err;
        dvalues[j] = cfg.value_coef * 2.0 * err * inv_b;
    }
    out.surrogate *= inv_b;
    out.value *= inv_b;
    out.entropy *= inv_b;
    out.clip_fraction = clipped * inv_b;
    out.total = -out.surrogate + cfg.value_coef * out.value - cfg.entropy_coef * out.entropy;
    out.grad = Eigen::VectorXd::Zero(ac.parameter_count());
    ac.backward(x, dlogits, dvalues, out.grad);
    return out;
}

PpoDiagnostics ppo_update(ActorCritic& ac, std::span<const RolloutStep> steps, const PpoConfig& cfg, Rng& rng) {
    cfg.validate();
    if (steps.empty()) throw ContractError("PPO update needs at least one episode");
    auto adv = gae_advantages(steps, EnvConfig::discount, cfg.gae_lambda);
    Eigen::VectorXd a = adv.advantages;
    if (cfg.normalize_advantages && a.size() > 1) {
        const double mean = a.mean();
        const double sd = std::sqrt((a.array() - mean).square().mean());
        a = (a.array() - mean) / (sd + 1e-8);
    }

    std::vector<std::size_t> order(steps.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Eigen::VectorXd theta = ac.parameters();
    PpoDiagnostics diag;
    for (int e = 0; e < cfg.epochs; ++e) {
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.minibatch)) {
            const std::size_t len = std::min<std::size_t>(static_cast<std::size_t>(cfg.minibatch), order.size() - start);
            const std::span<const std::size_t> mb(order.data() + start, len);
            auto loss = ppo_loss(ac, steps, mb, a, adv.targets, cfg);
            clip_grad_norm(loss.grad, cfg.max_grad_norm);
            ac.optimizer().step(theta, loss.grad, cfg.learning_rate);
            ac.set_parameters(theta);
            diag.loss += loss.total;
            diag.surrogate += loss.surrogate;
            diag.value += loss.value;
            diag.entropy += loss.entropy;
            diag.clip_fraction += loss.clip_fraction;
            ++diag.minibatches;
        }
    }
    const double m = diag.minibatches;
    diag.loss /= m;
    diag.surrogate /= m;
    diag.value /= m;
    diag.entropy /= m;
    diag.clip_fraction /= m;
    return diag;
}

std::vector<RolloutStep> collect_rollouts(DiagnosisEnv& env, const ActorCritic& ac, int timesteps, Rng& rng) {
    std::vector<RolloutStep> steps;
    steps.reserve(static_cast<std::size_t>(timesteps) + static_cast<std::size_t>(env.config().step_cap()));
    std::size_t episode_start = 0;
    Eigen::VectorXd emb = env.reset();
    while (true) {
        RolloutStep s;
        s.embedding = emb;
        s.valid = env.valid_actions();
        const auto r = ac.act(emb, s.valid, ActMode::Sample, rng);
        s.action = r.action;
        s.log_prob = r.log_prob;
        s.value = r.value;
        s.classifier_version = env.classifier().version();
        const auto res = env.step(r.action);
        s.reward = res.reward;
        s.done = res.done;
        steps.push_back(std::move(s));
        if (!res.done) {
            emb = res.embedding;
            continue;
        }
        for (std::size_t i = episode_start; i < steps.size(); ++i) steps[i].label = res.info.label;
        episode_start = steps.size();
        if (steps.size() >= static_cast<std::size_t>(timesteps)) break;
        emb = env.reset();
    }
    return steps;
}

}  // namespace dxp
