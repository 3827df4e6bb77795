#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "dxp/error.hpp"
#include "dxp/pipeline.hpp"

namespace {

struct Common {
    std::uint64_t seed = 0;
    std::string config;
    std::string preset = "full";
    std::string out;
    std::vector<std::string> sets;
};

struct Extra {
    int jobs = 1;
    std::string encoder, front, run, metric;
    double lambda = 0.0, rho = 0.0;
    int instances = -1;
    bool have_lambda = false, have_rho = false;
};

dxp::RunConfig resolve(const Common& c, const Extra& x) {
    dxp::RunConfig base = dxp::RunConfig::preset(c.preset);
    nlohmann::json doc = nlohmann::json::object();
    if (!c.config.empty()) {
        try {
            doc = nlohmann::json::parse(dxp::read_text(c.config));
        } catch (const nlohmann::json::parse_error& e) {
            throw dxp::ConfigError(c.config, e.what());
        }
    }
    for (const auto& s : c.sets) dxp::apply_override(doc, s);
    if (x.have_lambda) dxp::apply_override(doc, "env.lambda=" + dxp::format_real(x.lambda));
    if (x.have_rho) dxp::apply_override(doc, "env.rho=" + dxp::format_real(x.rho));
    if (!x.metric.empty()) doc["sweep"]["metric"] = x.metric;
    if (x.instances >= 0) doc["oracle"]["instances"] = x.instances;
    return dxp::RunConfig::from_json(doc, base);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cost-sensitive diagnosis policies and their cost-metric Pareto fronts"};
    app.require_subcommand(1);
    app.set_version_flag("--version", DXP_VERSION);

    Common common;
    Extra extra;
    const std::vector<std::pair<std::string, std::string>> commands{
        {"gen-data", "Write a synthetic cohort (data.csv, scheme.json)"},
        {"pretrain", "Pretrain the state encoder"},
        {"train", "Train one (lambda, rho) instance with SM-DDPO"},
        {"sweep", "Train every grid instance and write front.csv"},
        {"front", "Extract the upper envelope from front.csv"},
        {"oracle", "Certify shaped-front containment on tiny exact instances"},
        {"eval", "Evaluate a trained run on the test split"}};

    for (const auto& [name, help] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--seed", common.seed, "Root seed")->required();
        sub->add_option("--config", common.config, "JSON config document")->check(CLI::ExistingFile);
        sub->add_option("--preset", common.preset, "full | desk | smoke")->capture_default_str();
        sub->add_option("--out", common.out, "Output directory (relative to $DXP_OUTPUT_ROOT if set)");
        sub->add_option("--set", common.sets, "Override a config entry: section.key=value");
        if (name == "sweep" || name == "oracle")
            sub->add_option("--jobs", extra.jobs, "Parallel instances")->check(CLI::PositiveNumber);
        if (name == "train" || name == "sweep") sub->add_option("--encoder", extra.encoder, "Pretrained encoder.json");
        if (name == "train" || name == "eval") {
            sub->add_option("--lambda", extra.lambda, "TP weight")->each([&](const std::string&) { extra.have_lambda = true; });
            sub->add_option("--rho", extra.rho, "Cost weight (<= 0)")->each([&](const std::string&) { extra.have_rho = true; });
        }
        if (name == "sweep" || name == "front") sub->add_option("--metric", extra.metric, "f1 | am");
        if (name == "front") sub->add_option("--front", extra.front, "front.csv from sweep")->required();
        if (name == "eval") sub->add_option("--run", extra.run, "Directory written by train")->required();
        if (name == "oracle") sub->add_option("--instances", extra.instances, "Random instances besides the reference");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    const auto* sub = app.get_subcommands().front();
    const std::string name = sub->get_name();
    try {
        const dxp::RunConfig cfg = resolve(common, extra);
        dxp::Invocation inv;
        inv.command = name;
        inv.argv.assign(argv, argv + argc);
        inv.seed = common.seed;
        inv.out = dxp::resolve_output(common.out.empty() ? "dxp-out/" + name : common.out);

        int rc = 0;
        if (name == "gen-data") rc = dxp::cmd_gen_data(cfg, inv);
        else if (name == "pretrain") rc = dxp::cmd_pretrain(cfg, inv);
        else if (name == "train") rc = dxp::cmd_train(cfg, inv, extra.encoder);
        else if (name == "sweep") rc = dxp::cmd_sweep(cfg, inv, extra.encoder, extra.jobs);
        else if (name == "front") rc = dxp::cmd_front(cfg, inv, extra.front);
        else if (name == "oracle") rc = dxp::cmd_oracle(cfg, inv, extra.jobs);
        else if (name == "eval") rc = dxp::cmd_eval(cfg, inv, extra.run);
        if (rc != 0) std::cerr << "dxp " << name << ": finished with status " << rc << " (see " << inv.out.string() << ")\n";
        return rc;
    } catch (const dxp::ConfigError& e) {
        std::cerr << "dxp " << name << ": usage error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "dxp " << name << ": error: " << e.what() << "\n";
        return 1;
    }
}
