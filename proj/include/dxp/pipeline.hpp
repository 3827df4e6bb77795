#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dxp/classifier.hpp"
#include "dxp/dataset.hpp"
#include "dxp/encoder.hpp"
#include "dxp/oracle.hpp"
#include "dxp/pareto.hpp"
#include "dxp/policy.hpp"
#include "dxp/trainer.hpp"

namespace dxp {

struct DataConfig {
    std::optional<SyntheticSpec> synthetic;  // used when csv is empty
    std::string csv;
    std::string scheme;
};

struct EnvSettings {
    double cost_unit = 100.0;
    double lambda = 1.0;
    double rho = -0.1;
};

struct SweepConfig {
    int n_lambda = 19;
    double lambda_lo = 0.25;
    double lambda_hi = 16.0;
    int n_rho = 10;
    double rho_lo = 0.01;
    double rho_hi = 3.0;
    FrontMetric metric = FrontMetric::F1;
    bool checkpoints = false;

    SweepGrid grid(double class_ratio) const;
};

struct OracleConfig {
    int instances = 20;
    double max_policies = 2e6;
    RandomInstanceSpec random;
    std::size_t trajectory_episodes = 100000;
    int trajectory_policies = 10;
};

/// Every knob of every subcommand; serialized as one JSON document with a section per module.
struct RunConfig {
    DataConfig data;
    SplitSpec split;
    FlowConfig flow;
    EmConfig em;
    int augment_copies = 1;
    ClassifierConfig classifier;
    PpoConfig ppo;
    SmDdpoConfig trainer;
    EnvSettings env;
    SweepConfig sweep;
    OracleConfig oracle;

    /// "full" (full-scale defaults), "desk" (schedules ÷10) or "smoke" (seconds per instance).
    static RunConfig preset(const std::string& name);
    nlohmann::json to_json() const;
    /// Fields absent from `doc` keep the values of `base`.
    static RunConfig from_json(const nlohmann::json& doc, const RunConfig& base);
    void validate() const;
};

/// Applies "a.b.c=value" to a config document (value parsed as JSON, else taken as a string).
void apply_override(nlohmann::json& doc, const std::string& assignment);

std::uint64_t fnv1a(const std::string& text);

/// Writes via a sibling temporary file and rename.
void write_atomic(const std::filesystem::path& path, const std::string& contents);
std::string read_text(const std::filesystem::path& path);

/// Resolves relative output paths against $DXP_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output(const std::filesystem::path& p);

struct Invocation {
    std::string command;
    std::vector<std::string> argv;
    std::uint64_t seed = 0;
    std::filesystem::path out;
};

nlohmann::json make_manifest(const Invocation& inv, const RunConfig& cfg);

/// Loaded, split and standardized data.
struct PreparedData {
    PanelScheme scheme;
    DataSplits splits;
    ZScore zscore;
};

PreparedData prepare_data(const RunConfig& cfg, std::uint64_t seed);

/// Pretrains the encoder on random-mask copies of the encoder-pretrain split.
Encoder build_encoder(const RunConfig& cfg, const PreparedData& data, std::uint64_t seed);

struct TrainedInstance {
    Classifier classifier;
    ActorCritic policy;
    TrainingLog log;
    EvalReport test;
};

/// One SM-DDPO run for `shaping`, evaluated on the test split.
TrainedInstance train_instance(const RunConfig& cfg, const PreparedData& data, std::shared_ptr<const Encoder> encoder,
                               const ShapingParams& shaping, std::uint64_t seed);

// Subcommands; each returns the process exit status.
int cmd_gen_data(const RunConfig& cfg, const Invocation& inv);
int cmd_pretrain(const RunConfig& cfg, const Invocation& inv);
int cmd_train(const RunConfig& cfg, const Invocation& inv, const std::string& encoder_path);
int cmd_sweep(const RunConfig& cfg, const Invocation& inv, const std::string& encoder_path, int jobs);
int cmd_front(const RunConfig& cfg, const Invocation& inv, const std::string& front_path);
int cmd_oracle(const RunConfig& cfg, const Invocation& inv, int jobs);
int cmd_eval(const RunConfig& cfg, const Invocation& inv, const std::string& run_dir);

}  // namespace dxp
