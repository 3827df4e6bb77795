#include <doctest.h>

#include <cmath>
#include <memory>

#include "dxp/error.hpp"
#include "dxp/evaluate.hpp"
#include "dxp/metrics.hpp"

using namespace dxp;

namespace {

ConfusionTally tally(double tp, double tn, double fp, double fn) {
    ConfusionTally t;
    t.tp = tp;
    t.tn = tn;
    t.fp = fp;
    t.fn = fn;
    t.n_episodes = 1;
    return t;
}

ConfusionTally random_tally(Rng& rng) {
    double w[4];
    double s = 0;
    for (double& x : w) s += (x = uniform01(rng) + 1e-3);
    return tally(w[0] / s, w[1] / s, w[2] / s, w[3] / s);
}

class FixedDiagnosis : public DecisionPolicy {
public:
    explicit FixedDiagnosis(int action) : action_(action) {}
    int decide(const Eigen::VectorXd&, std::span<const std::uint8_t>) const override { return action_; }

private:
    int action_;
};

// Buys the single panel, then predicts P iff the revealed binary value is 1.
class BuyThenFollow : public DecisionPolicy {
public:
    int decide(const Eigen::VectorXd& e, std::span<const std::uint8_t>) const override {
        if (e[3] == 0.0) return 0;  // mask block starts after imputed (1) + probabilities (2)
        return e[0] > 0.5 ? 2 : 1;
    }
};

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("f1: both forms and the worked example") {
    CHECK(f1_score(tally(0.10, 0.80, 0.05, 0.05)) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    CHECK(f1_score(tally(0.2, 0.8, 0.0, 0.0)) == doctest::Approx(1.0));
    CHECK(f1_score(tally(0.0, 1.0, 0.0, 0.0)) == 0.0);
    Rng rng(1);
    for (int i = 0; i < 10000; ++i) {
        const auto t = random_tally(rng);
        CHECK(std::abs(f1_score(t) - t.tp / (t.tp + 0.5 * (t.fp + t.fn))) < 1e-12);
    }
}

TEST_CASE("f1 is strictly increasing in tp and in tn") {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        const auto t = random_tally(rng);
        const double d = 1e-3 * uniform01(rng) + 1e-6;
        CHECK(f1_score(tally(t.tp + d, t.tn, t.fp, t.fn)) > f1_score(t));
        CHECK(f1_score(tally(t.tp, t.tn + d, t.fp, t.fn)) > f1_score(t));
    }
}

TEST_CASE("am: worked example, both forms, contract") {
    CHECK(am_score(tally(0.15, 0.60, 0.20, 0.05), 4.0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(am_linear(tally(0.15, 0.60, 0.20, 0.05), 4.0) == doctest::Approx(0.75).epsilon(1e-14));
    CHECK(am_score(tally(0.2, 0.8, 0.0, 0.0), 4.0) == doctest::Approx(1.0));
    CHECK(am_score(tally(0.0, 0.8, 0.0, 0.2), 4.0) == doctest::Approx(0.5));
    CHECK_THROWS_AS(am_score(tally(0.15, 0.60, 0.20, 0.05), 3.0), ContractError);
    Rng rng(3);
    for (int i = 0; i < 1000; ++i) {
        const auto t = random_tally(rng);
        const double ratio = implied_class_ratio(t);
        CHECK(std::abs(am_score(t, ratio) - am_linear(t, ratio)) < 1e-12);
    }
}

TEST_CASE("auroc: examples, ties, errors, monotone invariance") {
    const std::vector<ScoredLabel> ex{{0.9, Label::Positive}, {0.8, Label::Negative}, {0.3, Label::Positive}};
    CHECK(auroc(ex) == doctest::Approx(0.5));
    const std::vector<ScoredLabel> sep{{0.1, Label::Negative}, {0.2, Label::Negative}, {0.7, Label::Positive}};
    CHECK(auroc(sep) == 1.0);
    const std::vector<ScoredLabel> tied{{0.4, Label::Negative}, {0.4, Label::Positive}, {0.4, Label::Positive}};
    CHECK(auroc(tied) == 0.5);
    const std::vector<ScoredLabel> one{{0.4, Label::Positive}};
    CHECK_THROWS_AS(auroc(one), UndefinedMetricError);

    Rng rng(4);
    std::vector<ScoredLabel> s, t;
    for (int i = 0; i < 300; ++i) {
        const double x = std::round(uniform01(rng) * 20.0) / 20.0;  // force ties
        const Label y = coin(rng, 0.3) ? Label::Positive : Label::Negative;
        s.push_back({x, y});
        t.push_back({std::exp(3.0 * x) - 7.0, y});
    }
    CHECK(auroc(s) == auroc(t));
    // Direct pair count as the oracle.
    double wins = 0, pairs = 0;
    for (const auto& a : s)
        for (const auto& b : s)
            if (is_positive(a.label) && !is_positive(b.label)) {
                pairs += 1;
                wins += a.score > b.score ? 1.0 : (a.score == b.score ? 0.5 : 0.0);
            }
    CHECK(auroc(s) == doctest::Approx(wins / pairs).epsilon(1e-12));
}

TEST_CASE("counter and merge") {
    ConfusionCounter c;
    c.record(Label::Positive, Label::Positive, 10);
    c.record(Label::Negative, Label::Positive, 0);
    c.record(Label::Negative, Label::Negative, 20);
    c.record(Label::Positive, Label::Negative, 10);
    const auto t = c.tally();
    CHECK(t.tp == 0.25);
    CHECK(t.tp + t.tn + t.fp + t.fn == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(t.mean_cost() == 10.0);
    ConfusionCounter d;
    d.record(Label::Positive, Label::Positive, 0);
    const auto m = t.merged(d.tally());
    CHECK(m.n_episodes == 5);
    CHECK(m.tp == doctest::Approx(0.4));
    CHECK(m.mean_cost() == doctest::Approx(8.0));
    // Associativity.
    ConfusionCounter e;
    e.record(Label::Negative, Label::Negative, 5);
    const auto left = t.merged(d.tally()).merged(e.tally());
    const auto right = t.merged(d.tally().merged(e.tally()));
    CHECK(left.tp == doctest::Approx(right.tp).epsilon(1e-15));
    CHECK(left.total_cost == right.total_cost);
}

TEST_CASE("evaluate_policy on the one-test reference cohort") {
    // 100 patients matching the tabular reference instance: (x=1,P) 18, (x=0,P) 2, (x=0,N) 72, (x=1,N) 8.
    auto pool = std::make_shared<std::vector<PatientRecord>>();
    auto add = [&](int count, double x, Label y) {
        for (int i = 0; i < count; ++i) pool->push_back({{x}, {0}, y, std::to_string(pool->size())});
    };
    add(18, 1.0, Label::Positive);
    add(2, 0.0, Label::Positive);
    add(72, 0.0, Label::Negative);
    add(8, 1.0, Label::Negative);
    EnvConfig cfg;
    cfg.scheme = PanelScheme({"t"}, {Panel{"T", 10.0, {0}}}, {});
    auto enc = std::make_shared<const Encoder>(Encoder::initial(1, FlowConfig{}, EmConfig{}, 1));
    auto clf = std::make_shared<const Classifier>(Classifier::create(1, ClassifierConfig{}, 1));

    const auto follow = evaluate_policy(BuyThenFollow{}, cfg, pool, enc, clf);
    CHECK(follow.tally.tp == doctest::Approx(0.18).epsilon(1e-12));
    CHECK(follow.tally.tn == doctest::Approx(0.72).epsilon(1e-12));
    CHECK(follow.tally.fp == doctest::Approx(0.08).epsilon(1e-12));
    CHECK(follow.tally.fn == doctest::Approx(0.02).epsilon(1e-12));
    CHECK(follow.mean_cost == doctest::Approx(10.0));
    CHECK(follow.f1 == doctest::Approx(18.0 / 23.0));
    CHECK(follow.panel_rates[0] == 1.0);

    const auto always_p = evaluate_policy(FixedDiagnosis(2), cfg, pool, enc, clf);
    CHECK(always_p.tally.tp == doctest::Approx(0.2));
    CHECK(always_p.mean_cost == 0.0);

    const auto again = evaluate_policy(BuyThenFollow{}, cfg, pool, enc, clf);
    CHECK(again.to_json() == follow.to_json());
}

}  // TEST_SUITE
