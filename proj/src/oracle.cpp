#include "dxp/oracle.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <map>
#include <numeric>
#include <unordered_map>

#include "dxp/error.hpp"

namespace dxp {

namespace {

constexpr double kCostTol = 1e-9;

bool cost_leq(double a, double b) { return a <= b + kCostTol * std::max(1.0, std::abs(b)); }

}  // namespace

// ---------------------------------------------------------------------------
// TabularInstance

void TabularInstance::validate() const {
    if (n_features < 0 || n_features > 16) throw SpecError("tabular instance: 0..16 binary features");
    if (panels.size() > 3) throw SpecError("tabular instance: at most 3 panels");
    if (profiles.empty() || profiles.size() > 16) throw SpecError("tabular instance: 1..16 profiles");
    const std::uint32_t all = n_features == 0 ? 0u : ((1u << n_features) - 1u);
    std::uint32_t covered = visible;
    for (const auto& p : panels) {
        if (!(p.cost >= 0.0) || !std::isfinite(p.cost)) throw SpecError("tabular instance: panel cost must be >= 0");
        if (p.features == 0 || (p.features & ~all)) throw SpecError("tabular instance: bad panel feature set");
        if (covered & p.features) throw SpecError("tabular instance: panels overlap");
        covered |= p.features;
    }
    if (covered != all) throw SpecError("tabular instance: features not covered by panels and visible set");
    double total = 0.0;
    for (const auto& pr : profiles) {
        if (!(pr.prob > 0.0)) throw SpecError("tabular instance: profile probabilities must be positive");
        if (pr.values & ~all) throw SpecError("tabular instance: profile value outside feature range");
        total += pr.prob;
    }
    if (std::abs(total - 1.0) > 1e-12) throw SpecError("tabular instance: probabilities must sum to 1");
}

double TabularInstance::positive_prior() const {
    double p = 0.0;
    for (const auto& pr : profiles)
        if (is_positive(pr.label)) p += pr.prob;
    return p;
}

double TabularInstance::class_ratio() const {
    const double p = positive_prior();
    if (!(p > 0.0 && p < 1.0)) throw UndefinedMetricError("class ratio needs both labels");
    return (1.0 - p) / p;
}

double TabularInstance::total_cost() const {
    double c = 0.0;
    for (const auto& p : panels) c += p.cost;
    return c;
}

double TabularInstance::cost_unit() const {
    double c = 0.0;
    for (const auto& p : panels)
        if (p.cost > 0.0 && (c == 0.0 || p.cost < c)) c = p.cost;
    return c > 0.0 ? c : 1.0;
}

nlohmann::json TabularInstance::to_json() const {
    nlohmann::json ps = nlohmann::json::array(), prs = nlohmann::json::array();
    for (const auto& p : panels) ps.push_back({{"cost", p.cost}, {"features", p.features}});
    for (const auto& pr : profiles)
        prs.push_back({{"values", pr.values}, {"label", is_positive(pr.label) ? 1 : 0}, {"prob", pr.prob}});
    return {{"features", n_features}, {"visible", visible}, {"panels", ps}, {"profiles", prs}};
}

TabularInstance TabularInstance::from_json(const nlohmann::json& doc) {
    TabularInstance t;
    try {
        t.n_features = doc.at("features").get<int>();
        t.visible = doc.value("visible", 0u);
        for (const auto& p : doc.at("panels")) t.panels.push_back({p.at("cost").get<double>(), p.at("features").get<std::uint32_t>()});
        for (const auto& pr : doc.at("profiles"))
            t.profiles.push_back({pr.at("values").get<std::uint32_t>(),
                                  pr.at("label").get<int>() ? Label::Positive : Label::Negative, pr.at("prob").get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("tabular instance: ") + e.what());
    }
    t.validate();
    return t;
}

std::uint64_t TabularInstance::hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : to_json().dump()) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

TabularInstance TabularInstance::reference() {
    TabularInstance t;
    t.n_features = 1;
    t.panels = {{10.0, 1u}};
    t.profiles = {{1u, Label::Positive, 0.18}, {0u, Label::Positive, 0.02}, {0u, Label::Negative, 0.72}, {1u, Label::Negative, 0.08}};
    return t;
}

TabularInstance random_instance(const RandomInstanceSpec& spec, Rng& rng) {
    auto uniform_int = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
    for (int attempt = 0; attempt < 10000; ++attempt) {
        TabularInstance t;
        t.n_features = uniform_int(1, spec.max_features);
        const int n_panels = uniform_int(1, std::min(spec.max_panels, t.n_features));
        std::vector<int> order(static_cast<std::size_t>(t.n_features));
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::size_t next = 0;
        if (t.n_features > n_panels && coin(rng)) t.visible = 1u << order[next++];
        t.panels.resize(static_cast<std::size_t>(n_panels));
        for (auto& p : t.panels) {
            p.features = 1u << order[next++];
            p.cost = 1.0 + 99.0 * uniform01(rng);
        }
        for (; next < order.size(); ++next)
            t.panels[static_cast<std::size_t>(uniform_int(0, n_panels - 1))].features |= 1u << order[next];

        const int n_profiles = uniform_int(2, spec.max_profiles);
        double total = 0.0;
        for (int i = 0; i < n_profiles; ++i) {
            Profile pr;
            pr.values = static_cast<std::uint32_t>(uniform_int(0, (1 << t.n_features) - 1));
            pr.label = coin(rng, 0.35) ? Label::Positive : Label::Negative;
            pr.prob = 0.05 + uniform01(rng);
            total += pr.prob;
            t.profiles.push_back(pr);
        }
        for (auto& pr : t.profiles) pr.prob /= total;
        const double prior = t.positive_prior();
        if (!(prior > 0.0 && prior < 1.0)) continue;
        try {
            t.validate();
            if (TabularMdp(t).policy_count() > spec.max_policies) continue;
        } catch (const Error&) {
            continue;
        }
        return t;
    }
    throw SpecError("could not draw a tabular instance within the policy budget");
}

// ---------------------------------------------------------------------------
// TabularMdp

TabularMdp::TabularMdp(TabularInstance inst, std::size_t max_states) : inst_(std::move(inst)) {
    inst_.validate();
    const auto& prof = inst_.profiles;
    const int n_panels = inst_.panel_count();
    std::unordered_map<std::uint64_t, int> index;

    auto add_state = [&](std::uint32_t panels, std::uint32_t members, bool initial) {
        const std::uint64_t key = (static_cast<std::uint64_t>(panels) << 32) | members;
        if (auto it = index.find(key); it != index.end()) return it->second;
        State s;
        s.panels = panels;
        s.members = members;
        s.initial = initial;
        for (std::size_t i = 0; i < prof.size(); ++i)
            if (members & (1u << i)) {
                s.mass += prof[i].prob;
                if (is_positive(prof[i].label)) s.positive_mass += prof[i].prob;
            }
        s.children.resize(static_cast<std::size_t>(n_panels));
        states_.push_back(std::move(s));
        if (states_.size() > max_states) throw SizeError("tabular state space exceeds " + std::to_string(max_states));
        const int id = static_cast<int>(states_.size()) - 1;
        index.emplace(key, id);
        return id;
    };

    // Partition `members` by the values of the features in `feature_mask`.
    auto partition = [&](std::uint32_t members, std::uint32_t feature_mask) {
        std::map<std::uint32_t, std::uint32_t> groups;
        for (std::size_t i = 0; i < prof.size(); ++i)
            if (members & (1u << i)) groups[prof[i].values & feature_mask] |= 1u << i;
        std::vector<std::uint32_t> out;
        for (const auto& [v, g] : groups) out.push_back(g);
        return out;
    };

    const std::uint32_t everyone = prof.size() == 32 ? ~0u : ((1u << prof.size()) - 1u);
    std::vector<int> level;
    for (std::uint32_t g : partition(everyone, inst_.visible)) level.push_back(add_state(0, g, true));
    while (!level.empty()) {
        std::vector<int> next;
        for (int sid : level) {
            for (int k = 0; k < n_panels; ++k) {
                const std::uint32_t pm = states_[static_cast<std::size_t>(sid)].panels;
                if (pm & (1u << k)) continue;
                const std::uint32_t members = states_[static_cast<std::size_t>(sid)].members;
                std::vector<int> kids;
                for (std::uint32_t g : partition(members, inst_.panels[static_cast<std::size_t>(k)].features)) {
                    const auto before = states_.size();
                    const int c = add_state(pm | (1u << k), g, false);
                    if (states_.size() > before) next.push_back(c);
                    kids.push_back(c);
                }
                states_[static_cast<std::size_t>(sid)].children[static_cast<std::size_t>(k)] = std::move(kids);
            }
        }
        level = std::move(next);
    }
}

bool TabularMdp::valid(int state, int action) const {
    if (action < 0 || action >= action_count()) return false;
    if (action >= inst_.panel_count()) return true;
    return !(states_[static_cast<std::size_t>(state)].panels & (1u << action));
}

double TabularMdp::policy_count() const {
    std::vector<double> t(states_.size(), 0.0);
    for (std::size_t i = states_.size(); i-- > 0;) {
        double c = 2.0;
        for (const auto& kids : states_[i].children) {
            if (kids.empty()) continue;
            double prod = 1.0;
            for (int k : kids) prod *= t[static_cast<std::size_t>(k)];
            c += prod;
        }
        t[i] = c;
    }
    double total = 1.0;
    for (std::size_t i = 0; i < states_.size(); ++i)
        if (states_[i].initial) total *= t[i];
    return total;
}

TabularPolicy TabularMdp::constant_policy(Label diagnosis) const {
    return TabularPolicy(states_.size(), is_positive(diagnosis) ? action_positive() : action_negative());
}

TabularPolicy TabularMdp::random_policy(Rng& rng) const {
    TabularPolicy p(states_.size());
    for (std::size_t s = 0; s < states_.size(); ++s) {
        std::vector<int> options;
        for (int a = 0; a < action_count(); ++a)
            if (valid(static_cast<int>(s), a)) options.push_back(a);
        p[s] = options[std::uniform_int_distribution<std::size_t>(0, options.size() - 1)(rng)];
    }
    return p;
}

// ---------------------------------------------------------------------------
// Occupancy and tallies

double OccupancyTable::flow_residual() const {
    double worst = 0.0;
    const std::size_t n = inflow.size();
    for (std::size_t s = 0; s < n; ++s) {
        double out = 0.0;
        for (int a = 0; a < n_actions; ++a) out += at(s, a);
        worst = std::max(worst, std::abs(out - inflow[s] - initial[s]));
    }
    return worst;
}

OccupancyTable occupancy_of(const TabularMdp& mdp, const TabularPolicy& policy) {
    const auto& states = mdp.states();
    if (policy.size() != states.size()) throw ContractError("policy does not match the state space");
    OccupancyTable occ;
    occ.n_actions = mdp.action_count();
    const auto n = states.size();
    occ.mu.assign(n * static_cast<std::size_t>(occ.n_actions), 0.0);
    occ.mu_positive.assign(occ.mu.size(), 0.0);
    occ.inflow.assign(n, 0.0);
    occ.initial.assign(n, 0.0);
    for (std::size_t s = 0; s < n; ++s)
        if (states[s].initial) occ.initial[s] = states[s].mass;
    for (std::size_t s = 0; s < n; ++s) {
        const double total = occ.initial[s] + occ.inflow[s];
        if (total == 0.0) continue;
        const int a = policy[s];
        if (!mdp.valid(static_cast<int>(s), a)) throw InvalidActionError("policy picks an invalid action");
        const auto idx = s * static_cast<std::size_t>(occ.n_actions) + static_cast<std::size_t>(a);
        occ.mu[idx] = total;
        occ.mu_positive[idx] = total * states[s].positive_mass / states[s].mass;
        if (a < mdp.instance().panel_count())
            for (int c : states[s].children[static_cast<std::size_t>(a)])
                occ.inflow[static_cast<std::size_t>(c)] += total * states[static_cast<std::size_t>(c)].mass / states[s].mass;
    }
    return occ;
}

ConfusionTally tally_from_occupancy(const TabularMdp& mdp, const OccupancyTable& occ) {
    ConfusionTally t;
    t.n_episodes = 1;
    const int np = mdp.instance().panel_count();
    for (std::size_t s = 0; s < occ.inflow.size(); ++s) {
        const auto base = s * static_cast<std::size_t>(occ.n_actions);
        const double mu_n = occ.mu[base + static_cast<std::size_t>(np)];
        const double mu_p = occ.mu[base + static_cast<std::size_t>(np + 1)];
        const double pos_n = occ.mu_positive[base + static_cast<std::size_t>(np)];
        const double pos_p = occ.mu_positive[base + static_cast<std::size_t>(np + 1)];
        t.tp += pos_p;
        t.fp += mu_p - pos_p;
        t.fn += pos_n;
        t.tn += mu_n - pos_n;
        for (int k = 0; k < np; ++k) t.total_cost += mdp.instance().panels[static_cast<std::size_t>(k)].cost * occ.mu[base + static_cast<std::size_t>(k)];
    }
    return t;
}

namespace {

// Diagnosis reached by profile `i` under `policy`, and the cost it pays.
std::pair<int, double> follow(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t i) {
    const auto& states = mdp.states();
    const std::uint32_t bit = 1u << i;
    int s = -1;
    for (std::size_t j = 0; j < states.size(); ++j)
        if (states[j].initial && (states[j].members & bit)) {
            s = static_cast<int>(j);
            break;
        }
    double cost = 0.0;
    const int np = mdp.instance().panel_count();
    for (int guard = 0; guard <= np; ++guard) {
        const int a = policy[static_cast<std::size_t>(s)];
        if (!mdp.valid(s, a)) throw InvalidActionError("policy picks an invalid action");
        if (a >= np) return {a, cost};
        cost += mdp.instance().panels[static_cast<std::size_t>(a)].cost;
        int next = -1;
        for (int c : mdp.states()[static_cast<std::size_t>(s)].children[static_cast<std::size_t>(a)])
            if (states[static_cast<std::size_t>(c)].members & bit) next = c;
        s = next;
    }
    throw ContractError("trajectory exceeded the step cap");
}

}  // namespace

ConfusionTally exact_tally(const TabularMdp& mdp, const TabularPolicy& policy) {
    ConfusionTally t;
    t.n_episodes = 1;
    const int pos_action = mdp.action_positive();
    const auto& prof = mdp.instance().profiles;
    for (std::size_t i = 0; i < prof.size(); ++i) {
        const auto [a, cost] = follow(mdp, policy, i);
        const double p = prof[i].prob;
        const bool pred_pos = a == pos_action;
        if (is_positive(prof[i].label)) (pred_pos ? t.tp : t.fn) += p;
        else (pred_pos ? t.fp : t.tn) += p;
        t.total_cost += p * cost;
    }
    return t;
}

ConfusionTally sample_tally(const TabularMdp& mdp, const TabularPolicy& policy, std::size_t episodes, std::uint64_t seed) {
    const auto& prof = mdp.instance().profiles;
    std::vector<double> cdf;
    double acc = 0.0;
    for (const auto& p : prof) cdf.push_back(acc += p.prob);
    // Cache each profile's outcome; sampling only needs the patient draw.
    std::vector<std::pair<int, double>> outcome;
    for (std::size_t i = 0; i < prof.size(); ++i) outcome.push_back(follow(mdp, policy, i));
    Rng rng(seed);
    ConfusionCounter counter;
    for (std::size_t e = 0; e < episodes; ++e) {
        const double u = uniform01(rng) * acc;
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin()),
                                             prof.size() - 1);
        const auto [a, cost] = outcome[i];
        counter.record(prof[i].label, a == mdp.action_positive() ? Label::Positive : Label::Negative, cost);
    }
    return counter.tally();
}

// ---------------------------------------------------------------------------
// Enumeration and DP

void enumerate_policies(const TabularMdp& mdp,
                        const std::function<void(const TabularPolicy&, const ConfusionTally&)>& visit,
                        double max_policies) {
    if (mdp.policy_count() > max_policies)
        throw SizeError("policy enumeration exceeds the configured bound of " + std::to_string(max_policies));
    const auto& states = mdp.states();
    const int np = mdp.instance().panel_count();
    const auto n = states.size();
    TabularPolicy policy(n, mdp.action_negative());
    std::vector<int> reach(n, 0);

    std::function<void(std::size_t, ConfusionTally)> rec = [&](std::size_t idx, ConfusionTally acc) {
        if (idx == n) {
            visit(policy, acc);
            return;
        }
        const auto& s = states[idx];
        if (!s.initial && reach[idx] == 0) {
            policy[idx] = mdp.action_negative();
            rec(idx + 1, acc);
            return;
        }
        const double neg = s.mass - s.positive_mass;
        policy[idx] = mdp.action_negative();
        ConfusionTally a = acc;
        a.tn += neg;
        a.fn += s.positive_mass;
        rec(idx + 1, a);

        policy[idx] = mdp.action_positive();
        a = acc;
        a.tp += s.positive_mass;
        a.fp += neg;
        rec(idx + 1, a);

        for (int k = 0; k < np; ++k) {
            if (!mdp.valid(static_cast<int>(idx), k)) continue;
            policy[idx] = k;
            a = acc;
            a.total_cost += mdp.instance().panels[static_cast<std::size_t>(k)].cost * s.mass;
            for (int c : s.children[static_cast<std::size_t>(k)]) ++reach[static_cast<std::size_t>(c)];
            rec(idx + 1, a);
            for (int c : s.children[static_cast<std::size_t>(k)]) --reach[static_cast<std::size_t>(c)];
        }
        policy[idx] = mdp.action_negative();
    };
    ConfusionTally start;
    start.n_episodes = 1;
    rec(0, start);
}

std::vector<ConfusionTally> enumerate_tallies(const TabularMdp& mdp, double max_policies) {
    std::vector<ConfusionTally> out;
    enumerate_policies(mdp, [&](const TabularPolicy&, const ConfusionTally& t) { out.push_back(t); }, max_policies);
    return out;
}

DpSolution dp_solve_shaped(const TabularMdp& mdp, const ShapingParams& shaping, double cost_unit) {
    if (!(shaping.lambda >= 0.0) || !(shaping.rho <= 0.0)) throw ContractError("shaping weights out of range");
    if (!(cost_unit > 0.0)) throw ContractError("cost unit must be positive");
    const auto& states = mdp.states();
    const int np = mdp.instance().panel_count();
    std::vector<double> v(states.size(), 0.0);
    DpSolution sol;
    sol.policy.assign(states.size(), mdp.action_negative());
    for (std::size_t i = states.size(); i-- > 0;) {
        const auto& s = states[i];
        // Candidate order fixes the tie-break: N, P, then panels by index.
        double best = s.mass - s.positive_mass;
        int arg = mdp.action_negative();
        const double q_pos = shaping.lambda * s.positive_mass;
        if (q_pos > best + 1e-12) {
            best = q_pos;
            arg = mdp.action_positive();
        }
        for (int k = 0; k < np; ++k) {
            if (!mdp.valid(static_cast<int>(i), k)) continue;
            double q = shaping.rho * mdp.instance().panels[static_cast<std::size_t>(k)].cost / cost_unit * s.mass;
            for (int c : s.children[static_cast<std::size_t>(k)]) q += v[static_cast<std::size_t>(c)];
            if (q > best + 1e-12) {
                best = q;
                arg = k;
            }
        }
        v[i] = best;
        sol.policy[i] = arg;
    }
    for (std::size_t i = 0; i < states.size(); ++i)
        if (states[i].initial) sol.value += v[i];
    sol.tally = tally_from_occupancy(mdp, occupancy_of(mdp, sol.policy));
    return sol;
}

std::vector<double> brute_force_front(std::span<const ConfusionTally> policies, std::span<const double> budgets) {
    std::vector<double> out;
    for (double b : budgets) {
        double best = 0.0;
        for (const auto& t : policies)
            if (cost_leq(t.total_cost, b)) best = std::max(best, f1_score(t));
        out.push_back(best);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Certificates

namespace {

// Policies sorted by cost with running maxima of a linear score.
struct PrefixMax {
    std::vector<double> cost;
    std::vector<double> best;

    double query(double c) const {
        const auto it = std::upper_bound(cost.begin(), cost.end(), c + kCostTol * std::max(1.0, std::abs(c)));
        if (it == cost.begin()) return -std::numeric_limits<double>::infinity();
        return best[static_cast<std::size_t>(it - cost.begin()) - 1];
    }
};

PrefixMax prefix_max(const std::vector<ConfusionTally>& sorted, const std::function<double(const ConfusionTally&)>& score) {
    PrefixMax pm;
    double run = -std::numeric_limits<double>::infinity();
    for (const auto& t : sorted) {
        run = std::max(run, score(t));
        pm.cost.push_back(t.total_cost);
        pm.best.push_back(run);
    }
    return pm;
}

std::vector<ConfusionTally> sorted_by_cost(std::vector<ConfusionTally> v) {
    std::stable_sort(v.begin(), v.end(), [](const auto& a, const auto& b) { return a.total_cost < b.total_cost; });
    return v;
}

}  // namespace

nlohmann::json ContainmentReport::to_json() const {
    return {{"policies", policies},         {"shapings", shapings},         {"violations", violations},
            {"mixtures", mixtures},
            {"worst_margin", worst_margin}, {"epsilon_grid", epsilon_grid}, {"budgets", budgets},
            {"brute_front", brute_front},   {"shaped_front", shaped_front}};
}

ContainmentReport verify_containment(const TabularMdp& mdp, const SweepGrid& grid, std::vector<double> budgets,
                                     double max_policies) {
    const auto all = sorted_by_cost(enumerate_tallies(mdp, max_policies));
    ContainmentReport rep;
    rep.policies = all.size();
    rep.shapings = grid.size();
    const double unit = mdp.instance().cost_unit();

    std::map<double, PrefixMax> by_lambda;
    std::map<double, std::vector<std::pair<double, ConfusionTally>>> sweeps;  // λ -> (ρ, solution)
    std::vector<ConfusionTally> solutions;
    for (const auto& sh : grid.entries) {
        auto it = by_lambda.find(sh.lambda);
        if (it == by_lambda.end())
            it = by_lambda.emplace(sh.lambda, prefix_max(all, [l = sh.lambda](const ConfusionTally& t) { return t.tn + l * t.tp; })).first;
        const auto sol = dp_solve_shaped(mdp, sh, unit);
        const double margin = it->second.query(sol.tally.total_cost) - (sol.tally.tn + sh.lambda * sol.tally.tp);
        rep.worst_margin = std::max(rep.worst_margin, margin);
        if (margin > 1e-9) ++rep.violations;
        solutions.push_back(sol.tally);
        sweeps[sh.lambda].emplace_back(sh.rho, sol.tally);
    }

    // Neighbouring ρ solutions that are both optimal at their tie point: every mixture of
    // the two is itself a shaped solution there.
    struct Segment {
        ConfusionTally cheap, dear;
    };
    std::vector<Segment> segments;
    for (auto& [lambda, sweep] : sweeps) {
        std::sort(sweep.begin(), sweep.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        for (std::size_t j = 0; j + 1 < sweep.size(); ++j) {
            const auto& [rho_hi, t1] = sweep[j];
            const auto& [rho_lo, t2] = sweep[j + 1];
            if (std::abs(t1.total_cost - t2.total_cost) <= kCostTol * std::max(1.0, t1.total_cost)) continue;
            const double o1 = t1.tn + lambda * t1.tp, o2 = t2.tn + lambda * t2.tp;
            const double rho_tie = unit * (o2 - o1) / (t1.total_cost - t2.total_cost);
            if (!(rho_tie <= rho_hi + 1e-12 && rho_tie >= rho_lo - 1e-12)) continue;
            const double v = dp_solve_shaped(mdp, {lambda, std::min(rho_tie, 0.0)}, unit).value;
            const double r = std::min(rho_tie, 0.0);
            if (std::abs(v - (o1 + r * t1.total_cost / unit)) > 1e-9 || std::abs(v - (o2 + r * t2.total_cost / unit)) > 1e-9)
                continue;
            segments.push_back(t1.total_cost < t2.total_cost ? Segment{t1, t2} : Segment{t2, t1});
        }
    }
    rep.mixtures = segments.size();

    if (budgets.empty()) {
        for (const auto& t : all)
            if (budgets.empty() || t.total_cost > budgets.back() + kCostTol * std::max(1.0, budgets.back()))
                budgets.push_back(t.total_cost);
    }
    rep.budgets = budgets;
    rep.brute_front = brute_force_front(all, budgets);
    rep.shaped_front = brute_force_front(solutions, budgets);
    for (std::size_t i = 0; i < budgets.size(); ++i) {
        const double b = budgets[i];
        for (const auto& seg : segments) {
            if (!cost_leq(seg.cheap.total_cost, b)) continue;
            // F1 is monotone along a segment, so an end of the affordable part is optimal.
            const double w = std::clamp((b - seg.cheap.total_cost) / (seg.dear.total_cost - seg.cheap.total_cost), 0.0, 1.0);
            ConfusionTally mix;
            mix.tp = (1.0 - w) * seg.cheap.tp + w * seg.dear.tp;
            mix.tn = (1.0 - w) * seg.cheap.tn + w * seg.dear.tn;
            rep.shaped_front[i] = std::max({rep.shaped_front[i], f1_score(seg.cheap), f1_score(mix)});
        }
        rep.epsilon_grid = std::max(rep.epsilon_grid, rep.brute_front[i] - rep.shaped_front[i]);
    }
    return rep;
}

nlohmann::json AmReport::to_json() const {
    return {{"policies", policies},         {"shapings", shapings},
            {"violations", violations},     {"worst_margin", worst_margin},
            {"worst_envelope_gap", worst_envelope_gap}, {"class_ratio", class_ratio}};
}

AmReport verify_am_front(const TabularMdp& mdp, const std::vector<double>& rhos, double max_policies) {
    const auto all = sorted_by_cost(enumerate_tallies(mdp, max_policies));
    AmReport rep;
    rep.policies = all.size();
    rep.shapings = rhos.size();
    const double ratio = mdp.instance().class_ratio();
    rep.class_ratio = ratio;
    const double unit = mdp.instance().cost_unit();
    const auto brute = prefix_max(all, [ratio](const ConfusionTally& t) { return am_score(t, ratio); });

    std::vector<ConfusionTally> solutions;
    for (double rho : rhos) {
        const auto sol = dp_solve_shaped(mdp, {ratio, rho}, unit);
        const double am = am_score(sol.tally, ratio);
        const double margin = brute.query(sol.tally.total_cost) - am;
        rep.worst_margin = std::max(rep.worst_margin, margin);
        if (margin > 1e-9) ++rep.violations;
        solutions.push_back(sol.tally);
    }
    // Envelope of the ρ-sweep versus brute force at every realized cost.
    const auto swept = prefix_max(sorted_by_cost(solutions), [ratio](const ConfusionTally& t) { return am_score(t, ratio); });
    for (const auto& t : solutions) {
        const double gap = std::abs(brute.query(t.total_cost) - swept.query(t.total_cost));
        rep.worst_envelope_gap = std::max(rep.worst_envelope_gap, gap);
        if (gap > 1e-9) ++rep.violations;
    }
    return rep;
}

}  // namespace dxp
