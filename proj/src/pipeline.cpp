#include "dxp/pipeline.hpp"

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>
#include <atomic>

#include "dxp/error.hpp"

namespace dxp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
    return buf;
}

const char* metric_name(FrontMetric m) { return m == FrontMetric::F1 ? "f1" : "am"; }

FrontMetric metric_from(const std::string& s) {
    if (s == "f1") return FrontMetric::F1;
    if (s == "am") return FrontMetric::AM;
    throw ConfigError("sweep.metric", "expected 'f1' or 'am'");
}

// Rejects keys that the reference document does not know about.
void check_known(const json& doc, const json& ref, const std::string& path) {
    if (!doc.is_object()) return;
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        const std::string field = path.empty() ? it.key() : path + "." + it.key();
        if (!ref.is_object() || !ref.contains(it.key())) throw ConfigError(field, "unknown field");
        const auto& r = ref.at(it.key());
        // Synthetic specs are replaced wholesale, so their interior is not checked here.
        if (r.is_object() && field != "data.synthetic") check_known(it.value(), r, field);
    }
}

template <class F>
auto section(const std::string& name, F&& parse) {
    try {
        return parse();
    } catch (const json::exception& e) {
        throw ConfigError(name, e.what());
    }
}

/// Files staged in memory and committed together at the end of a command.
class Artifacts {
public:
    explicit Artifacts(fs::path root) : root_(std::move(root)) {}
    void add(const fs::path& rel, std::string contents) { files_.emplace_back(rel, std::move(contents)); }
    void add_json(const fs::path& rel, const json& doc) { add(rel, doc.dump(2) + "\n"); }
    void commit() const {
        for (const auto& [rel, text] : files_) write_atomic(root_ / rel, text);
    }

private:
    fs::path root_;
    std::vector<std::pair<fs::path, std::string>> files_;
};

std::shared_ptr<const std::vector<PatientRecord>> share(const std::vector<PatientRecord>& v) {
    return std::make_shared<const std::vector<PatientRecord>>(v);
}

Encoder load_or_build_encoder(const RunConfig& cfg, const PreparedData& data, std::uint64_t seed,
                              const std::string& path, json& inputs) {
    if (path.empty()) return build_encoder(cfg, data, seed);
    const std::string text = read_text(path);
    inputs["encoder"] = {{"path", path}, {"fnv1a", hex64(fnv1a(text))}};
    try {
        Encoder enc = Encoder::from_json(json::parse(text));
        if (enc.dim() != data.scheme.feature_count())
            throw ConfigError("encoder", "checkpoint dimension does not match the data");
        return enc;
    } catch (const json::parse_error& e) {
        throw ConfigError("encoder", std::string("cannot parse checkpoint: ") + e.what());
    }
}

std::string to_csv(const std::vector<ParetoPoint>& pts) {
    std::ostringstream os;
    write_front_csv(os, pts);
    return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

SweepGrid SweepConfig::grid(double class_ratio) const {
    if (metric == FrontMetric::F1) return SweepGrid::log_grid(n_lambda, lambda_lo, lambda_hi, n_rho, rho_lo, rho_hi);
    const SweepGrid base = SweepGrid::log_grid(1, 1.0, 1.0, n_rho, rho_lo, rho_hi);
    std::vector<double> rhos;
    for (const auto& e : base.entries) rhos.push_back(e.rho);
    return SweepGrid::am_mode(class_ratio, rhos);
}

RunConfig RunConfig::preset(const std::string& name) {
    RunConfig c;
    c.data.synthetic = SyntheticSpec::cheap_informative(20000);
    c.trainer.policy_loops = 5;  // 5k timesteps per loop at 1024 per update
    if (name == "full") return c;
    if (name == "desk") {
        c.em.epochs = 50;
        c.trainer.outer_loops = 10;
        return c;
    }
    if (name == "smoke") {
        c.data.synthetic->n = 2000;
        c.flow.depth = 2;
        c.flow.hidden = 16;
        c.em.epochs = 2;
        c.classifier.hidden = 16;
        c.ppo.hidden = 16;
        c.ppo.timesteps = 64;
        c.ppo.epochs = 2;
        c.ppo.minibatch = 32;
        c.trainer.outer_loops = 1;
        c.trainer.policy_loops = 1;
        c.trainer.classifier_epochs = 1;
        return c;
    }
    throw ConfigError("preset", "unknown preset '" + name + "' (expected full, desk or smoke)");
}

json RunConfig::to_json() const {
    json j;
    j["data"] = {{"synthetic", data.synthetic ? data.synthetic->to_json() : json(nullptr)},
                 {"csv", data.csv},
                 {"scheme", data.scheme}};
    j["split"] = {{"fractions", split.fractions}};
    j["encoder"] = {{"flow", {{"depth", flow.depth}, {"hidden", flow.hidden}, {"scale_bound", flow.scale_bound}}},
                    {"em", em.to_json()},
                    {"augment_copies", augment_copies}};
    j["classifier"] = classifier.to_json();
    j["policy"] = ppo.to_json();
    j["trainer"] = trainer.to_json();
    j["env"] = {{"cost_unit", env.cost_unit}, {"lambda", env.lambda}, {"rho", env.rho}};
    j["sweep"] = {{"n_lambda", sweep.n_lambda}, {"lambda_lo", sweep.lambda_lo}, {"lambda_hi", sweep.lambda_hi},
                  {"n_rho", sweep.n_rho},       {"rho_lo", sweep.rho_lo},       {"rho_hi", sweep.rho_hi},
                  {"metric", metric_name(sweep.metric)}, {"checkpoints", sweep.checkpoints}};
    j["oracle"] = {{"instances", oracle.instances},
                   {"max_policies", oracle.max_policies},
                   {"random",
                    {{"max_features", oracle.random.max_features},
                     {"max_panels", oracle.random.max_panels},
                     {"max_profiles", oracle.random.max_profiles},
                     {"max_policies", oracle.random.max_policies}}},
                   {"trajectory_episodes", oracle.trajectory_episodes},
                   {"trajectory_policies", oracle.trajectory_policies}};
    return j;
}

RunConfig RunConfig::from_json(const json& doc, const RunConfig& base) {
    if (!doc.is_object()) throw ConfigError("config", "top level must be an object");
    json full = base.to_json();
    check_known(doc, full, "");
    full.merge_patch(doc);

    RunConfig c;
    section("data", [&] {
        const auto& d = full.at("data");
        if (d.contains("synthetic") && !d.at("synthetic").is_null()) c.data.synthetic = SyntheticSpec::from_json(d.at("synthetic"));
        c.data.csv = d.at("csv").get<std::string>();
        c.data.scheme = d.at("scheme").get<std::string>();
        return 0;
    });
    section("split.fractions", [&] {
        c.split.fractions = full.at("split").at("fractions").get<std::array<double, 5>>();
        return 0;
    });
    section("encoder", [&] {
        const auto& e = full.at("encoder");
        c.flow.depth = e.at("flow").at("depth").get<int>();
        c.flow.hidden = e.at("flow").at("hidden").get<int>();
        c.flow.scale_bound = e.at("flow").at("scale_bound").get<double>();
        c.em = EmConfig::from_json(e.at("em"));
        c.augment_copies = e.at("augment_copies").get<int>();
        return 0;
    });
    section("classifier", [&] { return c.classifier = ClassifierConfig::from_json(full.at("classifier")), 0; });
    section("policy", [&] { return c.ppo = PpoConfig::from_json(full.at("policy")), 0; });
    section("trainer", [&] { return c.trainer = SmDdpoConfig::from_json(full.at("trainer")), 0; });
    section("env", [&] {
        const auto& e = full.at("env");
        c.env.cost_unit = e.at("cost_unit").get<double>();
        c.env.lambda = e.at("lambda").get<double>();
        c.env.rho = e.at("rho").get<double>();
        return 0;
    });
    section("sweep", [&] {
        const auto& s = full.at("sweep");
        c.sweep.n_lambda = s.at("n_lambda").get<int>();
        c.sweep.lambda_lo = s.at("lambda_lo").get<double>();
        c.sweep.lambda_hi = s.at("lambda_hi").get<double>();
        c.sweep.n_rho = s.at("n_rho").get<int>();
        c.sweep.rho_lo = s.at("rho_lo").get<double>();
        c.sweep.rho_hi = s.at("rho_hi").get<double>();
        c.sweep.metric = metric_from(s.at("metric").get<std::string>());
        c.sweep.checkpoints = s.at("checkpoints").get<bool>();
        return 0;
    });
    section("oracle", [&] {
        const auto& o = full.at("oracle");
        c.oracle.instances = o.at("instances").get<int>();
        c.oracle.max_policies = o.at("max_policies").get<double>();
        const auto& r = o.at("random");
        c.oracle.random.max_features = r.at("max_features").get<int>();
        c.oracle.random.max_panels = r.at("max_panels").get<int>();
        c.oracle.random.max_profiles = r.at("max_profiles").get<int>();
        c.oracle.random.max_policies = r.at("max_policies").get<double>();
        c.oracle.trajectory_episodes = o.at("trajectory_episodes").get<std::size_t>();
        c.oracle.trajectory_policies = o.at("trajectory_policies").get<int>();
        return 0;
    });
    return c;
}

void RunConfig::validate() const {
    if (data.csv.empty()) {
        if (!data.synthetic) throw ConfigError("data", "either data.csv or data.synthetic is required");
        if (data.synthetic->n < 10) throw ConfigError("data.synthetic.n", "must be >= 10");
    } else {
        if (data.scheme.empty()) throw ConfigError("data.scheme", "required when data.csv is set");
        if (!fs::exists(data.csv)) throw ConfigError("data.csv", "file not found: " + data.csv);
        if (!fs::exists(data.scheme)) throw ConfigError("data.scheme", "file not found: " + data.scheme);
    }
    try {
        split.validate();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError("split.fractions", e.what());
    }
    if (flow.depth < 0) throw ConfigError("encoder.flow.depth", "must be >= 0");
    if (flow.hidden < 1) throw ConfigError("encoder.flow.hidden", "must be >= 1");
    if (!(flow.scale_bound > 0.0)) throw ConfigError("encoder.flow.scale_bound", "must be positive");
    em.validate();
    if (augment_copies < 1) throw ConfigError("encoder.augment_copies", "must be >= 1");
    classifier.validate();
    ppo.validate();
    trainer.validate();
    if (!(env.cost_unit > 0.0)) throw ConfigError("env.cost_unit", "must be positive");
    ShapingParams{env.lambda, env.rho}.validate();
    sweep.grid(1.0).validate();
    if (oracle.instances < 0) throw ConfigError("oracle.instances", "must be >= 0");
    if (!(oracle.max_policies >= 1.0)) throw ConfigError("oracle.max_policies", "must be >= 1");
    if (oracle.random.max_features < 1 || oracle.random.max_features > 16)
        throw ConfigError("oracle.random.max_features", "must be in [1, 16]");
    if (oracle.random.max_panels < 0 || oracle.random.max_panels > 3)
        throw ConfigError("oracle.random.max_panels", "must be in [0, 3]");
    if (oracle.random.max_profiles < 1 || oracle.random.max_profiles > 16)
        throw ConfigError("oracle.random.max_profiles", "must be in [1, 16]");
    if (oracle.trajectory_episodes < 1) throw ConfigError("oracle.trajectory_episodes", "must be >= 1");
}

void apply_override(json& doc, const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "expected key.path=value");
    const std::string key = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::parse_error&) {
        value = raw;
    }
    json* node = &doc;
    std::size_t start = 0;
    while (true) {
        const auto dot = key.find('.', start);
        const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
        if (part.empty()) throw ConfigError(key, "empty path component");
        if (!node->is_object()) *node = json::object();
        if (dot == std::string::npos) {
            (*node)[part] = value;
            return;
        }
        node = &(*node)[part];
        start = dot + 1;
    }
}

std::uint64_t fnv1a(const std::string& text) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

void write_atomic(const fs::path& path, const std::string& contents) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << contents;
        out.flush();
        if (!out) {
            out.close();
            fs::remove(tmp);
            throw Error("write failed: " + tmp.string());
        }
    }
    fs::rename(tmp, path);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError(path.string(), "cannot open file");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

fs::path resolve_output(const fs::path& p) {
    if (p.is_absolute()) return p;
    if (const char* root = std::getenv("DXP_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
    return p;
}

json make_manifest(const Invocation& inv, const RunConfig& cfg) {
    const json c = cfg.to_json();
    return {{"tool", "dxp"},
            {"version", DXP_VERSION},
            {"command", inv.command},
            {"argv", inv.argv},
            {"seed", inv.seed},
            {"config_hash", hex64(fnv1a(c.dump()))},
            {"config", c}};
}

// ---------------------------------------------------------------------------
// Shared stages

PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed) {
    PreparedData out;
    std::vector<PatientRecord> records;
    if (cfg.data.csv.empty()) {
        if (!cfg.data.synthetic) throw ConfigError("data", "either data.csv or data.synthetic is required");
        auto syn = generate_synthetic(*cfg.data.synthetic, seed);
        records = std::move(syn.records);
        out.scheme = std::move(syn.scheme);
    } else {
        out.scheme = PanelScheme::load(cfg.data.scheme);
        records = load_csv(cfg.data.csv, out.scheme);
    }
    SplitSpec ss = cfg.split;
    ss.seed = seed;
    out.splits = split(records, ss);
    const std::vector<PatientRecord>* fit_on[] = {&out.splits[SplitPart::EncoderPretrain],
                                                  &out.splits[SplitPart::RlTrain]};
    out.zscore = ZScore::fit(std::span<const std::vector<PatientRecord>* const>(fit_on, 2));
    for (auto& part : out.splits.parts) part = out.zscore.apply(part);
    return out;
}

Encoder build_encoder(const RunConfig& cfg, const PreparedData& data, std::uint64_t seed) {
    Encoder enc = Encoder::initial(data.scheme.feature_count(), cfg.flow, cfg.em, derive_seed(seed, 5));
    const auto aug = random_mask_augment(data.splits[SplitPart::EncoderPretrain], data.scheme, cfg.augment_copies,
                                         derive_seed(seed, 6));
    pretrain(enc, aug, derive_seed(seed, 7));
    return enc;
}

TrainedInstance train_instance(const RunConfig& cfg, const PreparedData& data, std::shared_ptr<const Encoder> encoder,
                               const ShapingParams& shaping, std::uint64_t seed) {
    TrainerInputs in{encoder, share(data.splits[SplitPart::RlTrain]), share(data.splits[SplitPart::RlValidation]), {}};
    in.env.scheme = data.scheme;
    in.env.shaping = shaping;
    in.env.cost_unit = cfg.env.cost_unit;
    in.env.validate();

    TrainedInstance t{Classifier::create(data.scheme.feature_count(), cfg.classifier, derive_seed(seed, 8)),
                      ActorCritic(embedding_dim(data.scheme), action_count(data.scheme), cfg.ppo, derive_seed(seed, 9)),
                      {},
                      {}};
    t.log = run_sm_ddpo(in, t.classifier, t.policy, cfg.ppo, cfg.trainer, seed);
    t.test = evaluate_policy(t.policy, in.env, share(data.splits[SplitPart::Test]), encoder,
                             std::make_shared<const Classifier>(t.classifier));
    return t;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_gen_data(const RunConfig& cfg, const Invocation& inv) {
    cfg.validate();
    if (!cfg.data.synthetic) throw ConfigError("data.synthetic", "gen-data needs a synthetic spec");
    const auto syn = generate_synthetic(*cfg.data.synthetic, inv.seed);
    Artifacts art(inv.out);
    std::ostringstream csv;
    write_csv(csv, syn.records, syn.scheme);
    art.add("data.csv", csv.str());
    art.add_json("scheme.json", syn.scheme.to_json());
    art.add_json("synthetic_spec.json", cfg.data.synthetic->to_json());
    art.add_json("manifest.json", make_manifest(inv, cfg));
    art.commit();
    return 0;
}

int cmd_pretrain(const RunConfig& cfg, const Invocation& inv) {
    cfg.validate();
    const auto data = prepare_data(cfg, inv.seed);
    const Encoder enc = build_encoder(cfg, data, inv.seed);
    Artifacts art(inv.out);
    art.add_json("encoder.json", enc.to_json());
    art.add_json("zscore.json", data.zscore.to_json());
    art.add_json("scheme.json", data.scheme.to_json());
    art.add_json("manifest.json", make_manifest(inv, cfg));
    art.commit();
    return 0;
}

int cmd_train(const RunConfig& cfg, const Invocation& inv, const std::string& encoder_path) {
    cfg.validate();
    const auto data = prepare_data(cfg, inv.seed);
    json inputs = json::object();
    auto enc = std::make_shared<const Encoder>(load_or_build_encoder(cfg, data, inv.seed, encoder_path, inputs));
    const auto t = train_instance(cfg, data, enc, {cfg.env.lambda, cfg.env.rho}, inv.seed);

    Artifacts art(inv.out);
    std::ostringstream log;
    t.log.write_csv(log);
    art.add("training_log.csv", log.str());
    art.add_json("encoder.json", enc->to_json());
    art.add_json("classifier.json", t.classifier.to_json());
    art.add_json("policy.json", t.policy.to_json());
    art.add_json("eval.json", t.test.to_json());
    json manifest = make_manifest(inv, cfg);
    manifest["inputs"] = inputs;
    art.add_json("manifest.json", manifest);
    art.commit();
    return 0;
}

int cmd_sweep(const RunConfig& cfg, const Invocation& inv, const std::string& encoder_path, int jobs) {
    cfg.validate();
    const auto data = prepare_data(cfg, inv.seed);
    json inputs = json::object();
    auto enc = std::make_shared<const Encoder>(load_or_build_encoder(cfg, data, inv.seed, encoder_path, inputs));
    const double prior = positive_fraction(data.splits[SplitPart::RlTrain]);
    if (!(prior > 0.0 && prior < 1.0)) throw ConfigError("data", "training split must contain both classes");
    const SweepGrid grid = cfg.sweep.grid((1.0 - prior) / prior);

    Artifacts art(inv.out);
    std::mutex art_mutex;
    const auto runner = [&](const ShapingParams& sh, std::uint64_t seed, std::size_t index) {
        const auto t = train_instance(cfg, data, enc, sh, seed);
        ParetoPoint p;
        p.f1 = t.test.f1;
        p.am = t.test.am;
        p.auroc = t.test.auroc;
        p.mean_cost = t.test.mean_cost;
        p.tally = t.test.tally;
        p.checkpoint = "-";
        if (cfg.sweep.checkpoints) {
            char dir[32];
            std::snprintf(dir, sizeof dir, "instances/%04zu", index);
            p.checkpoint = dir;
            std::lock_guard lock(art_mutex);
            art.add(fs::path(dir) / "classifier.json", t.classifier.to_json().dump(2) + "\n");
            art.add(fs::path(dir) / "policy.json", t.policy.to_json().dump(2) + "\n");
        }
        return p;
    };
    const auto points = sweep_grid(grid, runner, inv.seed, jobs);

    art.add("front.csv", to_csv(points));
    art.add_json("encoder.json", enc->to_json());
    json manifest = make_manifest(inv, cfg);
    manifest["inputs"] = inputs;
    manifest["grid_size"] = grid.size();
    art.add_json("manifest.json", manifest);
    art.commit();
    return 0;
}

int cmd_front(const RunConfig& cfg, const Invocation& inv, const std::string& front_path) {
    if (front_path.empty()) throw ConfigError("front", "--front <front.csv> is required");
    std::istringstream in(read_text(front_path));
    const auto points = read_front_csv(in);
    if (points.empty()) throw ConfigError("front", "front CSV has no rows");
    const auto env = upper_envelope(points, cfg.sweep.metric);

    Artifacts art(inv.out);
    art.add("pareto_front.csv", to_csv(env));
    std::ostringstream svg;
    write_front_svg(svg, points, cfg.sweep.metric);
    art.add("front.svg", svg.str());
    json manifest = make_manifest(inv, cfg);
    manifest["inputs"] = {{"front", {{"path", front_path}, {"fnv1a", hex64(fnv1a(read_text(front_path)))}}}};
    art.add_json("manifest.json", manifest);
    art.commit();
    return 0;
}

int cmd_oracle(const RunConfig& cfg, const Invocation& inv, int jobs) {
    cfg.validate();
    const SweepGrid grid = cfg.sweep.grid(1.0);
    std::vector<double> am_rhos;
    for (const auto& e : SweepGrid::log_grid(1, 1.0, 1.0, cfg.sweep.n_rho, cfg.sweep.rho_lo, cfg.sweep.rho_hi).entries)
        am_rhos.push_back(e.rho);
    am_rhos.push_back(0.0);

    std::vector<TabularInstance> instances{TabularInstance::reference()};
    Rng rng(inv.seed);
    for (int i = 0; i < cfg.oracle.instances; ++i) instances.push_back(random_instance(cfg.oracle.random, rng));

    std::vector<json> results(instances.size());
    std::vector<std::size_t> viol(instances.size()), am_viol(instances.size());
    std::vector<double> eps(instances.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < instances.size(); i = next++) {
            const TabularMdp mdp(instances[i]);
            const auto c = verify_containment(mdp, grid, {}, cfg.oracle.max_policies);
            const auto a = verify_am_front(mdp, am_rhos, cfg.oracle.max_policies);
            viol[i] = c.violations;
            am_viol[i] = a.violations;
            eps[i] = c.epsilon_grid;
            results[i] = {{"index", i},
                          {"name", i == 0 ? "reference" : "random"},
                          {"hash", hex64(instances[i].hash())},
                          {"states", mdp.states().size()},
                          {"instance", instances[i].to_json()},
                          {"containment", c.to_json()},
                          {"am", a.to_json()}};
        }
    };
    const int n = std::clamp(jobs, 1, static_cast<int>(instances.size()));
    std::vector<std::thread> pool;
    for (int t = 1; t < n; ++t) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();

    std::size_t total = 0, am_total = 0;
    double max_eps = 0.0;
    for (std::size_t i = 0; i < instances.size(); ++i) {
        total += viol[i];
        am_total += am_viol[i];
        max_eps = std::max(max_eps, eps[i]);
    }
    // Sampled vs exact tallies of random policies, cycling over the instances.
    json trajectories = json::array();
    double worst_z = 0.0;
    Rng prng(derive_seed(inv.seed, 77));
    for (int j = 0; j < cfg.oracle.trajectory_policies; ++j) {
        const std::size_t idx = static_cast<std::size_t>(j) % instances.size();
        const TabularMdp mdp(instances[idx]);
        const auto pi = mdp.random_policy(prng);
        const auto exact = exact_tally(mdp, pi);
        const auto sampled = sample_tally(mdp, pi, cfg.oracle.trajectory_episodes, derive_seed(inv.seed, 100 + static_cast<std::uint64_t>(j)));
        const double n_ep = static_cast<double>(cfg.oracle.trajectory_episodes);
        double z = 0.0;
        const double pe[4] = {exact.tp, exact.tn, exact.fp, exact.fn};
        const double ps[4] = {sampled.tp, sampled.tn, sampled.fp, sampled.fn};
        for (int c = 0; c < 4; ++c) {
            const double sd = std::sqrt(pe[c] * (1.0 - pe[c]) / n_ep);
            const double gap = std::abs(pe[c] - ps[c]);
            z = std::max(z, sd > 0.0 ? gap / sd : (gap > 1e-12 ? std::numeric_limits<double>::infinity() : 0.0));
        }
        worst_z = std::max(worst_z, z);
        trajectories.push_back({{"instance", idx},
                                {"exact", {exact.tp, exact.tn, exact.fp, exact.fn}},
                                {"sampled", {sampled.tp, sampled.tn, sampled.fp, sampled.fn}},
                                {"max_z", z}});
    }

    json grid_json = json::array();
    for (const auto& e : grid.entries) grid_json.push_back({e.lambda, e.rho});
    json cert = {{"format", "dxp-oracle-certificate"},
                 {"seed", inv.seed},
                 {"shaping_grid", grid_json},
                 {"am_rho_grid", am_rhos},
                 {"dominance_tolerance", 1e-9},
                 {"violations", total},
                 {"am_violations", am_total},
                 {"max_epsilon_grid", max_eps},
                 {"passed", total == 0 && am_total == 0},
                 {"trajectory_episodes", cfg.oracle.trajectory_episodes},
                 {"trajectory_max_z", worst_z},
                 {"trajectories", trajectories},
                 {"instances", results}};

    Artifacts art(inv.out);
    art.add_json("certificate.json", cert);
    art.add_json("manifest.json", make_manifest(inv, cfg));
    art.commit();
    return total == 0 && am_total == 0 ? 0 : 1;
}

int cmd_eval(const RunConfig& cfg, const Invocation& inv, const std::string& run_dir) {
    if (run_dir.empty()) throw ConfigError("run", "--run <train output directory> is required");
    cfg.validate();
    const fs::path dir(run_dir);
    json inputs;
    auto load = [&](const char* name) {
        const std::string text = read_text(dir / name);
        inputs[name] = hex64(fnv1a(text));
        try {
            return json::parse(text);
        } catch (const json::parse_error& e) {
            throw ConfigError((dir / name).string(), e.what());
        }
    };
    auto enc = std::make_shared<const Encoder>(Encoder::from_json(load("encoder.json")));
    auto clf = std::make_shared<const Classifier>(Classifier::from_json(load("classifier.json")));
    const ActorCritic policy = ActorCritic::from_json(load("policy.json"));

    const auto data = prepare_data(cfg, inv.seed);
    if (enc->dim() != data.scheme.feature_count() || clf->input_dim() != data.scheme.feature_count() ||
        policy.embed_dim() != embedding_dim(data.scheme))
        throw ConfigError("run", "checkpoints do not match the configured data");
    EnvConfig env;
    env.scheme = data.scheme;
    env.shaping = {cfg.env.lambda, cfg.env.rho};
    env.cost_unit = cfg.env.cost_unit;
    const auto rep = evaluate_policy(policy, env, share(data.splits[SplitPart::Test]), enc, clf);

    Artifacts art(inv.out);
    art.add_json("eval.json", rep.to_json());
    json manifest = make_manifest(inv, cfg);
    manifest["inputs"] = {{"run", run_dir}, {"fnv1a", inputs}};
    art.add_json("manifest.json", manifest);
    art.commit();
    return 0;
}

}  // namespace dxp
