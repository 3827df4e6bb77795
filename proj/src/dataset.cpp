#include "dxp/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dxp/error.hpp"
#include "dxp/rng.hpp"

namespace dxp {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    return cells;
}

std::string trim(std::string s) {
    auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

// Largest-remainder apportionment of `total` items by `fractions` (ties broken by index).
std::array<std::size_t, 5> apportion(std::size_t total, const std::array<double, 5>& fractions) {
    std::array<std::size_t, 5> counts{};
    std::array<double, 5> remainder{};
    std::size_t assigned = 0;
    for (std::size_t k = 0; k < 5; ++k) {
        const double quota = fractions[k] * static_cast<double>(total);
        counts[k] = static_cast<std::size_t>(std::floor(quota + 1e-9));
        remainder[k] = quota - static_cast<double>(counts[k]);
        assigned += counts[k];
    }
    std::array<std::size_t, 5> order{0, 1, 2, 3, 4};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t i = 0; assigned < total; i = (i + 1) % 5) {
        if (fractions[order[i]] > 0.0) {
            ++counts[order[i]];
            ++assigned;
        }
    }
    while (assigned > total) {  // floor(quota + eps) may overshoot by one
        for (auto it = order.rbegin(); it != order.rend() && assigned > total; ++it) {
            if (counts[*it] > 0) {
                --counts[*it];
                --assigned;
            }
        }
    }
    return counts;
}

}  // namespace

// ---------------------------------------------------------------------------
// PanelScheme

PanelScheme::PanelScheme(std::vector<std::string> feature_names, std::vector<Panel> panels, std::vector<int> visible)
    : feature_names_(std::move(feature_names)), panels_(std::move(panels)), visible_(std::move(visible)) {
    const int d = feature_count();
    owner_.assign(static_cast<std::size_t>(d), -2);
    auto claim = [&](int f, int owner, const std::string& where) {
        if (f < 0 || f >= d) throw SchemaError(where + ": feature index " + std::to_string(f) + " out of range");
        auto& slot = owner_[static_cast<std::size_t>(f)];
        if (slot != -2) throw SchemaError(where + ": feature '" + feature_names_[f] + "' assigned twice");
        slot = owner;
    };
    if (panels_.empty()) throw SchemaError("a panel scheme needs at least one panel");
    for (int f : visible_) claim(f, -1, "visible");
    for (int k = 0; k < panel_count(); ++k) {
        const auto& p = panels_[static_cast<std::size_t>(k)];
        if (!(p.cost >= 0.0) || !std::isfinite(p.cost)) throw SchemaError("panel '" + p.name + "': cost must be >= 0");
        if (p.features.empty()) throw SchemaError("panel '" + p.name + "' has no features");
        for (int f : p.features) claim(f, k, "panel '" + p.name + "'");
    }
    for (int f = 0; f < d; ++f) {
        if (owner_[static_cast<std::size_t>(f)] == -2)
            throw SchemaError("feature '" + feature_names_[f] + "' is neither visible nor in a panel");
    }
}

double PanelScheme::total_cost() const noexcept {
    double c = 0.0;
    for (const auto& p : panels_) c += p.cost;
    return c;
}

nlohmann::json PanelScheme::to_json() const {
    nlohmann::json panels = nlohmann::json::array();
    for (const auto& p : panels_) {
        std::vector<std::string> names;
        for (int f : p.features) names.push_back(feature_names_[f]);
        panels.push_back({{"name", p.name}, {"cost", p.cost}, {"features", names}});
    }
    std::vector<std::string> visible;
    for (int f : visible_) visible.push_back(feature_names_[f]);
    return {{"features", feature_names_}, {"panels", panels}, {"visible", visible}};
}

PanelScheme PanelScheme::from_json(const nlohmann::json& doc) {
    try {
        std::vector<std::string> names;
        if (doc.contains("features")) {
            names = doc.at("features").get<std::vector<std::string>>();
        } else {
            // Feature order: visible first, then panels in listed order.
            for (const auto& v : doc.value("visible", nlohmann::json::array())) names.push_back(v.get<std::string>());
            for (const auto& p : doc.at("panels"))
                for (const auto& f : p.at("features")) names.push_back(f.get<std::string>());
        }
        auto index_of = [&](const std::string& n) {
            auto it = std::find(names.begin(), names.end(), n);
            if (it == names.end()) throw SchemaError("unknown feature '" + n + "'");
            return static_cast<int>(it - names.begin());
        };
        std::vector<Panel> panels;
        for (const auto& p : doc.at("panels")) {
            Panel panel;
            panel.name = p.at("name").get<std::string>();
            panel.cost = p.at("cost").get<double>();
            for (const auto& f : p.at("features")) panel.features.push_back(index_of(f.get<std::string>()));
            panels.push_back(std::move(panel));
        }
        std::vector<int> visible;
        for (const auto& v : doc.value("visible", nlohmann::json::array())) visible.push_back(index_of(v.get<std::string>()));
        return PanelScheme(std::move(names), std::move(panels), std::move(visible));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("panel scheme: ") + e.what());
    }
}

PanelScheme PanelScheme::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open panel scheme " + path.string());
    nlohmann::json doc;
    try {
        in >> doc;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return from_json(doc);
}

void PanelScheme::save(const std::filesystem::path& path) const {
    std::ofstream out(path);
    out << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// ObservationMask

ObservationMask ObservationMask::initial(const PanelScheme& scheme) {
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(scheme.feature_count()), 0);
    for (int f : scheme.visible()) bits[static_cast<std::size_t>(f)] = 1;
    return ObservationMask(std::move(bits));
}

ObservationMask ObservationMask::all_observed(const PanelScheme& scheme) {
    return ObservationMask(std::vector<std::uint8_t>(static_cast<std::size_t>(scheme.feature_count()), 1));
}

void ObservationMask::observe_panel(const PanelScheme& scheme, int k) {
    for (int f : scheme.panel(k).features) bits_[static_cast<std::size_t>(f)] = 1;
}

bool ObservationMask::panel_observed(const PanelScheme& scheme, int k) const {
    return bits_[static_cast<std::size_t>(scheme.panel(k).features.front())] != 0;
}

bool ObservationMask::is_panel_atomic(const PanelScheme& scheme) const {
    for (const auto& p : scheme.panels()) {
        const auto first = bits_[static_cast<std::size_t>(p.features.front())];
        for (int f : p.features)
            if (bits_[static_cast<std::size_t>(f)] != first) return false;
    }
    return true;
}

bool ObservationMask::covers_visible(const PanelScheme& scheme) const {
    return std::all_of(scheme.visible().begin(), scheme.visible().end(),
                       [&](int f) { return bits_[static_cast<std::size_t>(f)] != 0; });
}

std::uint32_t ObservationMask::panel_bits(const PanelScheme& scheme) const {
    std::uint32_t out = 0;
    for (int k = 0; k < scheme.panel_count(); ++k)
        if (panel_observed(scheme, k)) out |= (1u << k);
    return out;
}

Eigen::VectorXd masked_features(std::span<const double> features, const ObservationMask& mask) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(features.size()));
    for (std::size_t i = 0; i < features.size(); ++i) out[static_cast<Eigen::Index>(i)] = mask[i] ? features[i] : 0.0;
    return out;
}

// ---------------------------------------------------------------------------
// CSV

std::vector<PatientRecord> parse_csv(std::istream& in, const PanelScheme& scheme) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(1, "missing header");
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    const auto& names = scheme.feature_names();
    const std::size_t d = names.size();
    if (header.empty() || header.back() != "y") throw SchemaError("last column must be 'y'");
    if (header.size() != d + 1) throw SchemaError("expected " + std::to_string(d) + " feature columns, got " +
                                                  std::to_string(header.size() - 1));
    // Columns may appear in any order; map them onto scheme positions.
    std::vector<std::size_t> column_to_feature(d);
    for (std::size_t c = 0; c < d; ++c) {
        auto it = std::find(names.begin(), names.end(), header[c]);
        if (it == names.end()) throw SchemaError("unknown column '" + header[c] + "'");
        column_to_feature[c] = static_cast<std::size_t>(it - names.begin());
    }

    std::vector<PatientRecord> records;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (cells.size() != d + 1)
            throw ParseError(line_no, "expected " + std::to_string(d + 1) + " cells, got " + std::to_string(cells.size()));
        PatientRecord r;
        r.features.assign(d, 0.0);
        r.source_missing.assign(d, 0);
        for (std::size_t c = 0; c < d; ++c) {
            const auto cell = trim(cells[c]);
            const auto f = column_to_feature[c];
            if (cell.empty()) {
                r.source_missing[f] = 1;
                continue;
            }
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(cell, &used);
            } catch (const std::exception&) {
                throw ParseError(line_no, "not a number: '" + cell + "'");
            }
            if (used != cell.size() || !std::isfinite(v)) throw ParseError(line_no, "not a finite number: '" + cell + "'");
            r.features[f] = v;
        }
        const auto y = trim(cells[d]);
        if (y == "0") {
            r.label = Label::Negative;
        } else if (y == "1") {
            r.label = Label::Positive;
        } else {
            throw ParseError(line_no, "label must be 0 or 1, got '" + y + "'");
        }
        r.id = std::to_string(records.size());
        records.push_back(std::move(r));
    }
    return records;
}

std::vector<PatientRecord> load_csv(const std::filesystem::path& path, const PanelScheme& scheme) {
    std::ifstream in(path);
    if (!in) throw SchemaError("cannot open " + path.string());
    return parse_csv(in, scheme);
}

std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(std::ostream& out, std::span<const PatientRecord> records, const PanelScheme& scheme) {
    const auto& names = scheme.feature_names();
    for (const auto& n : names) out << n << ',';
    out << "y\n";
    for (const auto& r : records) {
        for (std::size_t i = 0; i < names.size(); ++i) {
            if (r.source_missing.empty() || !r.source_missing[i]) out << format_real(r.features[i]);
            out << ',';
        }
        out << (is_positive(r.label) ? '1' : '0') << '\n';
    }
}

// ---------------------------------------------------------------------------
// Synthetic data

nlohmann::json SyntheticSpec::to_json() const {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [](const Eigen::MatrixXd& m) {
        std::vector<std::vector<double>> rows;
        for (Eigen::Index i = 0; i < m.rows(); ++i) {
            std::vector<double> row;
            for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
            rows.push_back(row);
        }
        return rows;
    };
    return {{"positive_prior", positive_prior}, {"n", n},
            {"mean_negative", vec(mean_negative)}, {"mean_positive", vec(mean_positive)},
            {"cov_negative", mat(cov_negative)}, {"cov_positive", mat(cov_positive)},
            {"scheme", scheme.to_json()}};
}

SyntheticSpec SyntheticSpec::from_json(const nlohmann::json& doc) {
    auto vec = [](const nlohmann::json& j) {
        auto v = j.get<std::vector<double>>();
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    auto mat = [](const nlohmann::json& j) {
        auto rows = j.get<std::vector<std::vector<double>>>();
        Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].size() != static_cast<std::size_t>(m.cols())) throw SpecError("ragged covariance matrix");
            for (std::size_t k = 0; k < rows[i].size(); ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
        }
        return m;
    };
    SyntheticSpec s;
    try {
        s.positive_prior = doc.at("positive_prior").get<double>();
        s.n = doc.value("n", std::size_t{20000});
        s.mean_negative = vec(doc.at("mean_negative"));
        s.mean_positive = vec(doc.at("mean_positive"));
        s.cov_negative = mat(doc.at("cov_negative"));
        s.cov_positive = mat(doc.at("cov_positive"));
        s.scheme = PanelScheme::from_json(doc.at("scheme"));
    } catch (const nlohmann::json::exception& e) {
        throw SpecError(std::string("synthetic spec: ") + e.what());
    }
    return s;
}

SyntheticSpec SyntheticSpec::cheap_informative(std::size_t n) {
    SyntheticSpec s;
    s.positive_prior = 0.1;
    s.n = n;
    s.mean_negative = Eigen::VectorXd::Zero(4);
    s.mean_positive = Eigen::VectorXd::Zero(4);
    s.mean_positive << 1.5, 1.5, 0.0, 0.0;
    s.cov_negative = Eigen::MatrixXd::Identity(4, 4);
    s.cov_positive = Eigen::MatrixXd::Identity(4, 4);
    s.scheme = PanelScheme({"a1", "a2", "b1", "b2"},
                           {Panel{"A", 10.0, {0, 1}}, Panel{"B", 100.0, {2, 3}}}, {});
    return s;
}

SyntheticData generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
    const auto d = static_cast<Eigen::Index>(spec.scheme.feature_count());
    if (!(spec.positive_prior > 0.0 && spec.positive_prior < 1.0)) throw SpecError("positive_prior must lie in (0,1)");
    auto check_dims = [&](const Eigen::VectorXd& m, const Eigen::MatrixXd& c, const char* which) {
        if (m.size() != d || c.rows() != d || c.cols() != d)
            throw SpecError(std::string(which) + ": dimensions do not match the panel scheme");
        if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12) throw SpecError(std::string(which) + ": covariance not symmetric");
    };
    check_dims(spec.mean_negative, spec.cov_negative, "negative class");
    check_dims(spec.mean_positive, spec.cov_positive, "positive class");
    Eigen::LLT<Eigen::MatrixXd> chol_neg(spec.cov_negative);
    Eigen::LLT<Eigen::MatrixXd> chol_pos(spec.cov_positive);
    if (chol_neg.info() != Eigen::Success) throw SpecError("negative-class covariance is not positive definite");
    if (chol_pos.info() != Eigen::Success) throw SpecError("positive-class covariance is not positive definite");
    const Eigen::MatrixXd l_neg = chol_neg.matrixL();
    const Eigen::MatrixXd l_pos = chol_pos.matrixL();

    Rng rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    SyntheticData out{{}, spec.scheme};
    out.records.reserve(spec.n);
    Eigen::VectorXd eps(d);
    for (std::size_t i = 0; i < spec.n; ++i) {
        PatientRecord r;
        r.label = coin(rng, spec.positive_prior) ? Label::Positive : Label::Negative;
        for (Eigen::Index j = 0; j < d; ++j) eps[j] = gauss(rng);
        const Eigen::VectorXd x = is_positive(r.label) ? Eigen::VectorXd(spec.mean_positive + l_pos * eps)
                                                       : Eigen::VectorXd(spec.mean_negative + l_neg * eps);
        r.features.assign(x.data(), x.data() + d);
        r.source_missing.assign(static_cast<std::size_t>(d), 0);
        r.id = "s" + std::to_string(i);
        out.records.push_back(std::move(r));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Augmentation

std::vector<MaskedSample> random_mask_augment(std::span<const PatientRecord> records, const PanelScheme& scheme,
                                              int per_record_copies, std::uint64_t seed) {
    if (per_record_copies < 1) throw ContractError("per_record_copies must be >= 1");
    Rng rng(seed);
    std::vector<MaskedSample> out;
    out.reserve(records.size() * static_cast<std::size_t>(per_record_copies));
    for (std::size_t i = 0; i < records.size(); ++i) {
        for (int c = 0; c < per_record_copies; ++c) {
            auto mask = ObservationMask::initial(scheme);
            for (int k = 0; k < scheme.panel_count(); ++k)
                if (coin(rng)) mask.observe_panel(scheme, k);
            MaskedSample s;
            s.features = records[i].features;
            s.source_missing = records[i].source_missing;
            if (s.source_missing.empty()) s.source_missing.assign(s.features.size(), 0);
            s.mask = std::move(mask);
            s.record = i;
            s.label = records[i].label;
            out.push_back(std::move(s));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Splitting

void SplitSpec::validate() const {
    double sum = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0)) throw SpecError("split fractions must be nonnegative");
        sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-12) throw SpecError("split fractions must sum to 1");
}

DataSplits split(std::span<const PatientRecord> records, const SplitSpec& spec) {
    spec.validate();
    std::vector<std::size_t> pos, neg;
    for (std::size_t i = 0; i < records.size(); ++i) (is_positive(records[i].label) ? pos : neg).push_back(i);
    Rng rng(spec.seed);
    std::shuffle(pos.begin(), pos.end(), rng);
    std::shuffle(neg.begin(), neg.end(), rng);

    const auto sizes = apportion(records.size(), spec.fractions);
    auto pos_counts = apportion(pos.size(), spec.fractions);
    for (std::size_t k = 0; k < 5; ++k) {
        if (pos_counts[k] > sizes[k]) throw StratificationError("part " + std::to_string(k) + " cannot hold its positives");
        if (sizes[k] > 0 && pos_counts[k] == 0)
            throw StratificationError("part " + std::to_string(k) + " would receive no positive records");
        if (sizes[k] - pos_counts[k] > neg.size()) throw StratificationError("not enough negative records");
    }
    DataSplits out;
    std::size_t p = 0, n = 0;
    for (std::size_t k = 0; k < 5; ++k) {
        auto& part = out.parts[k];
        const std::size_t n_neg = sizes[k] - pos_counts[k];
        if (n + n_neg > neg.size()) throw StratificationError("not enough negative records");
        std::vector<std::size_t> idx(pos.begin() + static_cast<std::ptrdiff_t>(p), pos.begin() + static_cast<std::ptrdiff_t>(p + pos_counts[k]));
        idx.insert(idx.end(), neg.begin() + static_cast<std::ptrdiff_t>(n), neg.begin() + static_cast<std::ptrdiff_t>(n + n_neg));
        p += pos_counts[k];
        n += n_neg;
        std::sort(idx.begin(), idx.end());
        part.reserve(idx.size());
        for (auto i : idx) part.push_back(records[i]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// ZScore

namespace {

template <class ForEach>
ZScore fit_zscore(std::size_t d, ForEach for_each) {
    std::vector<double> sum(d, 0.0), sumsq(d, 0.0);
    std::vector<std::size_t> count(d, 0);
    for_each([&](const PatientRecord& r) {
        for (std::size_t j = 0; j < d; ++j) {
            if (!r.source_missing.empty() && r.source_missing[j]) continue;
            sum[j] += r.features[j];
            ++count[j];
        }
    });
    std::vector<double> mean(d, 0.0), scale(d, 1.0);
    for (std::size_t j = 0; j < d; ++j)
        if (count[j] > 0) mean[j] = sum[j] / static_cast<double>(count[j]);
    for_each([&](const PatientRecord& r) {
        for (std::size_t j = 0; j < d; ++j) {
            if (!r.source_missing.empty() && r.source_missing[j]) continue;
            const double c = r.features[j] - mean[j];
            sumsq[j] += c * c;
        }
    });
    for (std::size_t j = 0; j < d; ++j) {
        const double var = count[j] > 0 ? sumsq[j] / static_cast<double>(count[j]) : 0.0;
        scale[j] = var > 0.0 ? std::sqrt(var) : 1.0;
    }
    return ZScore(std::move(mean), std::move(scale));
}

}  // namespace

ZScore ZScore::fit(std::span<const std::vector<PatientRecord>* const> parts) {
    std::size_t d = 0;
    for (const auto* part : parts)
        if (!part->empty()) d = part->front().features.size();
    return fit_zscore(d, [&](auto&& visit) {
        for (const auto* part : parts)
            for (const auto& r : *part) visit(r);
    });
}

ZScore ZScore::fit(std::span<const PatientRecord> records) {
    const std::size_t d = records.empty() ? 0 : records.front().features.size();
    return fit_zscore(d, [&](auto&& visit) {
        for (const auto& r : records) visit(r);
    });
}

PatientRecord ZScore::apply(const PatientRecord& record) const {
    PatientRecord out = record;
    if (out.features.size() != mean_.size()) throw ContractError("z-score dimension mismatch");
    for (std::size_t j = 0; j < mean_.size(); ++j) {
        const bool missing = !out.source_missing.empty() && out.source_missing[j];
        out.features[j] = missing ? 0.0 : (out.features[j] - mean_[j]) / scale_[j];
    }
    return out;
}

std::vector<PatientRecord> ZScore::apply(std::span<const PatientRecord> records) const {
    std::vector<PatientRecord> out;
    out.reserve(records.size());
    for (const auto& r : records) out.push_back(apply(r));
    return out;
}

nlohmann::json ZScore::to_json() const { return {{"mean", mean_}, {"scale", scale_}}; }

ZScore ZScore::from_json(const nlohmann::json& doc) {
    return ZScore(doc.at("mean").get<std::vector<double>>(), doc.at("scale").get<std::vector<double>>());
}

double positive_fraction(std::span<const PatientRecord> records) {
    if (records.empty()) return 0.0;
    const auto n = std::count_if(records.begin(), records.end(), [](const auto& r) { return is_positive(r.label); });
    return static_cast<double>(n) / static_cast<double>(records.size());
}

}  // namespace dxp
