#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include <json.hpp>

#include "dxp/env.hpp"
#include "dxp/metrics.hpp"
#include "dxp/pareto.hpp"
#include "dxp/rng.hpp"

namespace dxp {

struct TabularPanel {
    double cost = 0.0;
    std::uint32_t features = 0;  // bitmask over binary features
};

struct Profile {
    std::uint32_t values = 0;  // bit i = value of feature i
    Label label = Label::Negative;
    double prob = 0.0;
};

/// Finite patient distribution over binary features with priced panels.
struct TabularInstance {
    int n_features = 0;
    std::uint32_t visible = 0;
    std::vector<TabularPanel> panels;
    std::vector<Profile> profiles;

    void validate() const;
    int panel_count() const { return static_cast<int>(panels.size()); }
    double positive_prior() const;
    /// Healthy:ill ratio.
    double class_ratio() const;
    double total_cost() const;
    /// Reward cost unit used by the oracle: the cheapest positive panel price (1 if none).
    /// With it, ρ ≤ −1 per unit already rules out every purchase.
    double cost_unit() const;

    nlohmann::json to_json() const;
    static TabularInstance from_json(const nlohmann::json& doc);
    /// FNV-1a over the canonical JSON text.
    std::uint64_t hash() const;

    /// One binary test (cost 10) agreeing with the label w.p. 0.9; P(y=P) = 0.2.
    static TabularInstance reference();
};

struct RandomInstanceSpec {
    int max_features = 4;
    int max_panels = 3;
    int max_profiles = 16;
    /// Upper bound on the number of enumerable policies; larger draws are rejected.
    double max_policies = 50000;
};

TabularInstance random_instance(const RandomInstanceSpec& spec, Rng& rng);

/// A deterministic policy assigns one action per state (index into TabularMdp::states()).
using TabularPolicy = std::vector<int>;

/// Reachable state DAG of a tabular instance. A state is identified by its purchased
/// panels and the set of profiles consistent with what has been observed.
class TabularMdp {
public:
    struct State {
        std::uint32_t panels = 0;
        std::uint32_t members = 0;  // profile bitset
        double mass = 0.0;
        double positive_mass = 0.0;
        bool initial = false;
        std::vector<std::vector<int>> children;  // per panel; empty when already bought
    };

    explicit TabularMdp(TabularInstance inst, std::size_t max_states = 4096);

    const TabularInstance& instance() const noexcept { return inst_; }
    const std::vector<State>& states() const noexcept { return states_; }
    int action_count() const { return inst_.panel_count() + 2; }
    int action_negative() const { return inst_.panel_count(); }
    int action_positive() const { return inst_.panel_count() + 1; }
    bool valid(int state, int action) const;

    /// Number of reachable-restricted deterministic policies (may be astronomically large).
    double policy_count() const;

    TabularPolicy constant_policy(Label diagnosis) const;
    TabularPolicy random_policy(Rng& rng) const;

private:
    TabularInstance inst_;
    std::vector<State> states_;
};

struct OccupancyTable {
    int n_actions = 0;
    std::vector<double> mu;           // state-major, n_states × n_actions
    std::vector<double> mu_positive;  // share of mu carried by positive patients
    std::vector<double> inflow;       // from parent states
    std::vector<double> initial;      // ξ(s)

    double at(std::size_t s, int a) const { return mu[s * static_cast<std::size_t>(n_actions) + static_cast<std::size_t>(a)]; }
    /// max_s |Σ_a μ(s,a) − inflow(s) − ξ(s)|.
    double flow_residual() const;
};

OccupancyTable occupancy_of(const TabularMdp& mdp, const TabularPolicy& policy);
/// TP/TN/FP/FN and expected cost read off the occupancy measure.
ConfusionTally tally_from_occupancy(const TabularMdp& mdp, const OccupancyTable& occ);
/// The same quantities by following each profile's trajectory.
ConfusionTally exact_tally(const TabularMdp& mdp, const TabularPolicy& policy);
/// Empirical tally of `episodes` sampled patients.
ConfusionTally sample_tally(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t episodes, std::uint64_t seed);

/// Visits every reachable-restricted deterministic policy once (unreached states get the
/// N action). Tallies carry the expected cost in total_cost with n_episodes = 1.
void enumerate_policies(const TabularMdp& mdp,
                        const std::function<void(const TabularPolicy&, const ConfusionTally&)>& visit,
                        double max_policies = 2e6);
std::vector<ConfusionTally> enumerate_tallies(const TabularMdp& mdp, double max_policies = 2e6);

struct DpSolution {
    TabularPolicy policy;
    double value = 0.0;  // TN + λ·TP + ρ·Cost/cost_unit
    ConfusionTally tally;
};

/// Backward induction on the shaped rewards. Ties prefer N, then P, then the lowest panel.
DpSolution dp_solve_shaped(const TabularMdp& mdp, const ShapingParams& shaping, double cost_unit);

/// Max F1 over policies with cost ≤ each budget.
std::vector<double> brute_force_front(std::span<const ConfusionTally> policies, std::span<const double> budgets);

struct ContainmentReport {
    std::size_t policies = 0;
    std::size_t shapings = 0;
    std::size_t violations = 0;
    /// Largest (best cheaper-or-equal objective − shaped objective); ≤ 1e-9 when sound.
    double worst_margin = -std::numeric_limits<double>::infinity();
    double epsilon_grid = 0.0;
    /// Certified mixtures of neighbouring-ρ solutions admitted to the shaped front.
    std::size_t mixtures = 0;
    std::vector<double> budgets;
    std::vector<double> brute_front;
    std::vector<double> shaped_front;

    nlohmann::json to_json() const;
};

/// Exact dominance of every shaped solution over cheaper policies in TN + λ·TP, plus the
/// F1 front gap against brute force. The shaped front includes randomized mixtures of two
/// neighbouring-ρ solutions when DP confirms both are optimal at their tie point.
/// Empty `budgets` means every enumerated cost.
ContainmentReport verify_containment(const TabularMdp& mdp, const SweepGrid& grid, std::vector<double> budgets = {},
                                     double max_policies = 2e6);

struct AmReport {
    std::size_t policies = 0;
    std::size_t shapings = 0;
    std::size_t violations = 0;
    double worst_margin = -std::numeric_limits<double>::infinity();
    double worst_envelope_gap = 0.0;
    double class_ratio = 0.0;

    nlohmann::json to_json() const;
};

/// λ fixed to the class ratio; each ρ-solution must have the best AM among cheaper-or-equal
/// policies, and the ρ-swept envelope must equal the brute-force AM front at its costs.
AmReport verify_am_front(const TabularMdp& mdp, const std::vector<double>& rhos, double max_policies = 2e6);

}  // namespace dxp
