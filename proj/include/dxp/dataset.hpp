#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace dxp {

enum class Label : std::uint8_t { Negative = 0, Positive = 1 };

inline bool is_positive(Label y) noexcept { return y == Label::Positive; }

struct PatientRecord {
    std::vector<double> features;
    /// 1 where the source cell was empty; such cells are never used as imputation targets.
    std::vector<std::uint8_t> source_missing;
    Label label = Label::Negative;
    std::string id;
};

struct Panel {
    std::string name;
    double cost = 0.0;
    std::vector<int> features;
};

/// Partition of the feature vector into priced test panels plus free, always-visible features.
class PanelScheme {
public:
    PanelScheme() = default;
    PanelScheme(std::vector<std::string> feature_names, std::vector<Panel> panels, std::vector<int> visible);

    int feature_count() const noexcept { return static_cast<int>(feature_names_.size()); }
    int panel_count() const noexcept { return static_cast<int>(panels_.size()); }
    const Panel& panel(int k) const { return panels_.at(static_cast<std::size_t>(k)); }
    const std::vector<Panel>& panels() const noexcept { return panels_; }
    const std::vector<int>& visible() const noexcept { return visible_; }
    const std::vector<std::string>& feature_names() const noexcept { return feature_names_; }
    /// Panel index owning `feature`, or -1 for visible features.
    int panel_of(int feature) const { return owner_.at(static_cast<std::size_t>(feature)); }
    double total_cost() const noexcept;

    nlohmann::json to_json() const;
    static PanelScheme from_json(const nlohmann::json& doc);
    static PanelScheme load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

private:
    std::vector<std::string> feature_names_;
    std::vector<Panel> panels_;
    std::vector<int> visible_;
    std::vector<int> owner_;
};

/// Which of the d features the agent has seen. Panels are observed atomically.
class ObservationMask {
public:
    ObservationMask() = default;
    explicit ObservationMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {}

    /// Visible features observed, every panel unobserved.
    static ObservationMask initial(const PanelScheme& scheme);
    static ObservationMask all_observed(const PanelScheme& scheme);

    void observe_panel(const PanelScheme& scheme, int k);
    bool panel_observed(const PanelScheme& scheme, int k) const;
    bool is_panel_atomic(const PanelScheme& scheme) const;
    bool covers_visible(const PanelScheme& scheme) const;

    std::size_t size() const noexcept { return bits_.size(); }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }
    std::span<const std::uint8_t> bits() const noexcept { return bits_; }
    /// Panel-observation bitmask (bit k set iff panel k observed).
    std::uint32_t panel_bits(const PanelScheme& scheme) const;

    bool operator==(const ObservationMask&) const = default;

private:
    std::vector<std::uint8_t> bits_;
};

/// x ⊙ M with unobserved entries zeroed.
Eigen::VectorXd masked_features(std::span<const double> features, const ObservationMask& mask);

// ---------------------------------------------------------------------------
// File I/O

/// Parses a dataset CSV: header of feature names (matching `scheme`) plus a final `y` column.
/// Empty cells are recorded as source-missing and stored as 0.
std::vector<PatientRecord> load_csv(const std::filesystem::path& path, const PanelScheme& scheme);
std::vector<PatientRecord> parse_csv(std::istream& in, const PanelScheme& scheme);
void write_csv(std::ostream& out, std::span<const PatientRecord> records, const PanelScheme& scheme);

/// Shortest-round-trip-safe text form ("%.17g"; "nan" for NaN).
std::string format_real(double v);

// ---------------------------------------------------------------------------
// Synthetic cohorts

struct SyntheticSpec {
    double positive_prior = 0.1;
    Eigen::VectorXd mean_negative;
    Eigen::VectorXd mean_positive;
    Eigen::MatrixXd cov_negative;
    Eigen::MatrixXd cov_positive;
    PanelScheme scheme;
    std::size_t n = 20000;

    nlohmann::json to_json() const;
    static SyntheticSpec from_json(const nlohmann::json& doc);

    /// Four features: an informative two-feature panel (shift +1.5, cost 10) and a
    /// pure-noise two-feature panel (cost 100), unit covariances, 10% positives.
    static SyntheticSpec cheap_informative(std::size_t n = 20000);
};

struct SyntheticData {
    std::vector<PatientRecord> records;
    PanelScheme scheme;
};

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Masking augmentation

struct MaskedSample {
    std::vector<double> features;
    std::vector<std::uint8_t> source_missing;
    ObservationMask mask;
    std::size_t record = 0;
    Label label = Label::Negative;
};

/// Each copy observes the visible features plus every panel independently with probability 0.5.
std::vector<MaskedSample> random_mask_augment(std::span<const PatientRecord> records, const PanelScheme& scheme,
                                              int per_record_copies, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Splitting and normalization

enum class SplitPart : int { EncoderPretrain = 0, RlTrain = 1, EncoderValidation = 2, RlValidation = 3, Test = 4 };

struct SplitSpec {
    /// Encoder-pretrain, RL-train, encoder-validation, RL-validation, test.
    std::array<double, 5> fractions{0.25, 0.50, 0.05, 0.10, 0.10};
    std::uint64_t seed = 0;

    void validate() const;
};

struct DataSplits {
    std::array<std::vector<PatientRecord>, 5> parts;

    const std::vector<PatientRecord>& operator[](SplitPart p) const { return parts[static_cast<std::size_t>(p)]; }
    std::vector<PatientRecord>& operator[](SplitPart p) { return parts[static_cast<std::size_t>(p)]; }
};

/// Stratified, exhaustive and disjoint five-way split.
DataSplits split(std::span<const PatientRecord> records, const SplitSpec& spec);

/// Per-feature standardization fitted on training data only (source-missing cells ignored).
class ZScore {
public:
    ZScore() = default;
    ZScore(std::vector<double> mean, std::vector<double> scale) : mean_(std::move(mean)), scale_(std::move(scale)) {}

    static ZScore fit(std::span<const PatientRecord> records);
    static ZScore fit(std::span<const std::vector<PatientRecord>* const> parts);

    PatientRecord apply(const PatientRecord& record) const;
    std::vector<PatientRecord> apply(std::span<const PatientRecord> records) const;

    const std::vector<double>& mean() const noexcept { return mean_; }
    const std::vector<double>& scale() const noexcept { return scale_; }

    nlohmann::json to_json() const;
    static ZScore from_json(const nlohmann::json& doc);

private:
    std::vector<double> mean_;
    std::vector<double> scale_;
};

double positive_fraction(std::span<const PatientRecord> records);

}  // namespace dxp
