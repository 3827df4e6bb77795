#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <map>

#include "dxp/error.hpp"
#include "dxp/pipeline.hpp"

using namespace dxp;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("dxp_test_" + name);
    fs::remove_all(p);
    return p;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
    std::map<std::string, std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir))
        if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path());
    return files;
}

Invocation invocation(const std::string& cmd, const fs::path& out, std::uint64_t seed) {
    return Invocation{cmd, {"dxp", cmd, "--seed", std::to_string(seed), "--out", out.string()}, seed, out};
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(DXP_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_SUITE("pipeline") {

TEST_CASE("presets validate and round-trip through JSON") {
    for (const char* name : {"full", "desk", "smoke"}) {
        const auto cfg = RunConfig::preset(name);
        CHECK_NOTHROW(cfg.validate());
        const auto back = RunConfig::from_json(cfg.to_json(), RunConfig{});
        CHECK(back.to_json() == cfg.to_json());
    }
    const auto full = RunConfig::preset("full");
    CHECK(full.em.batch_size == 256);
    CHECK(full.em.alpha == 1e3);
    CHECK(full.classifier.hidden == 64);
    CHECK(full.ppo.learning_rate == 1e-4);
    CHECK(full.trainer.outer_loops == 100);
    CHECK(full.trainer.classifier_epochs == 6);
    CHECK(full.sweep.grid(4.0).size() == 190);
    CHECK_THROWS_AS(RunConfig::preset("huge"), ConfigError);
}

TEST_CASE("unknown and ill-typed fields name their path") {
    const auto base = RunConfig::preset("smoke");
    try {
        RunConfig::from_json({{"policy", {{"clipp", 0.3}}}}, base);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "policy.clipp");
    }
    CHECK_THROWS_AS(RunConfig::from_json({{"policy", {{"clip", "wide"}}}}, base), ConfigError);
    try {
        RunConfig::from_json({{"policy", {{"clip", 1.5}}}}, base).validate();
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        CHECK(e.field() == "policy.clip");
    }
    const auto partial = RunConfig::from_json({{"trainer", {{"outer_loops", 3}}}}, base);
    CHECK(partial.trainer.outer_loops == 3);
    CHECK(partial.ppo.hidden == base.ppo.hidden);
}

TEST_CASE("overrides") {
    nlohmann::json doc = nlohmann::json::object();
    apply_override(doc, "policy.clip=0.3");
    apply_override(doc, "trainer.start=pretrained");
    apply_override(doc, "sweep.checkpoints=true");
    CHECK(doc["policy"]["clip"] == 0.3);
    CHECK(doc["trainer"]["start"] == "pretrained");
    CHECK(doc["sweep"]["checkpoints"] == true);
    CHECK_THROWS_AS(apply_override(doc, "novalue"), ConfigError);
    const auto cfg = RunConfig::from_json(doc, RunConfig::preset("smoke"));
    CHECK(cfg.ppo.clip == 0.3);
    CHECK(cfg.trainer.start == ClassifierStart::Pretrained);
}

TEST_CASE("atomic writes and manifests") {
    const auto dir = scratch("atomic");
    fs::create_directories(dir);
    write_atomic(dir / "a.txt", "first");
    write_atomic(dir / "a.txt", "second");
    CHECK(read_text(dir / "a.txt") == "second");
    CHECK(std::distance(fs::directory_iterator(dir), fs::directory_iterator{}) == 1);
    CHECK(fnv1a("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a("a") == 0xaf63dc4c8601ec8cULL);

    const auto cfg = RunConfig::preset("smoke");
    const auto m = make_manifest(invocation("oracle", dir, 3), cfg);
    CHECK(m["command"] == "oracle");
    CHECK(m["seed"] == 3);
    CHECK(m["config"] == cfg.to_json());
    CHECK(m["config_hash"].get<std::string>().size() == 16);
    fs::remove_all(dir);
}

TEST_CASE("smoke pipeline: gen-data, pretrain, train, eval are byte-reproducible") {
    const auto cfg = RunConfig::preset("smoke");
    const auto root = scratch("pipeline");
    auto run_all = [&] {
        CHECK(cmd_gen_data(cfg, invocation("gen-data", root / "data", 4)) == 0);
        CHECK(cmd_pretrain(cfg, invocation("pretrain", root / "enc", 4)) == 0);
        CHECK(cmd_train(cfg, invocation("train", root / "run", 4), (root / "enc" / "encoder.json").string()) == 0);
        CHECK(cmd_eval(cfg, invocation("eval", root / "eval", 4), (root / "run").string()) == 0);
        return snapshot(root);
    };
    const auto first = run_all();
    for (const char* f : {"data/data.csv", "data/scheme.json", "data/manifest.json", "enc/encoder.json", "run/policy.json",
                          "run/classifier.json", "run/training_log.csv", "run/eval.json", "eval/eval.json"})
        CHECK_MESSAGE(first.count(f) == 1, f);
    const auto second = run_all();
    CHECK(first == second);
    // Evaluating a trained run reproduces its own test report.
    CHECK(nlohmann::json::parse(first.at("run/eval.json")) == nlohmann::json::parse(first.at("eval/eval.json")));
    fs::remove_all(root);
}

TEST_CASE("failed commands leave no partial output") {
    const auto cfg = RunConfig::preset("smoke");
    const auto root = scratch("failing");
    CHECK_THROWS(cmd_train(cfg, invocation("train", root / "run", 1), (root / "missing.json").string()));
    CHECK_FALSE(fs::exists(root / "run" / "training_log.csv"));
    fs::remove_all(root);
}

TEST_CASE("command-line binary") {
    const auto root = scratch("cli");
    CHECK(run_cli("gen-data --preset smoke --out " + (root / "a").string()) == 2);  // no --seed
    CHECK(run_cli("gen-data --seed 1 --preset smoke --set policy.clipp=1 --out " + (root / "a").string()) == 2);
    CHECK(run_cli("oracle --seed 7 --preset smoke --instances 1 --out " + (root / "o").string()) == 0);
    const auto cert = nlohmann::json::parse(read_text(root / "o" / "certificate.json"));
    CHECK(cert["passed"] == true);
    CHECK(cert["violations"] == 0);
    CHECK(cert["instances"].size() == 2);
    fs::remove_all(root);
}

}  // TEST_SUITE
