#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "dxp/env.hpp"
#include "dxp/metrics.hpp"

namespace dxp {

struct SweepGrid {
    std::vector<ShapingParams> entries;

    /// Outer product of log-spaced λ in [lambda_lo, lambda_hi] and −(log-spaced |ρ| in [rho_lo, rho_hi]).
    static SweepGrid log_grid(int n_lambda, double lambda_lo, double lambda_hi, int n_rho, double rho_lo, double rho_hi);
    /// 19 λ values in [0.25, 16] × 10 ρ values in [−3, −0.01]: 190 instances.
    static SweepGrid standard();
    /// λ fixed to the class ratio; ρ swept.
    static SweepGrid am_mode(double class_ratio, const std::vector<double>& rhos);

    std::size_t size() const noexcept { return entries.size(); }
    void validate() const;
};

enum class FrontMetric { F1, AM };

struct ParetoPoint {
    double lambda = 0.0;
    double rho = 0.0;
    double f1 = 0.0;
    double am = 0.0;
    double auroc = 0.0;
    double mean_cost = 0.0;
    ConfusionTally tally;
    std::uint64_t seed = 0;
    std::string checkpoint;

    bool failed() const { return checkpoint == "failed"; }
    double metric(FrontMetric m) const { return m == FrontMetric::F1 ? f1 : am; }
};

/// Points not dominated by a cheaper-or-equal point with a strictly higher metric, one per
/// cost (largest metric, then smallest (λ,ρ)), sorted by cost. Failed points are ignored.
std::vector<ParetoPoint> upper_envelope(const std::vector<ParetoPoint>& points, FrontMetric metric);

void write_front_csv(std::ostream& out, const std::vector<ParetoPoint>& points);
std::vector<ParetoPoint> read_front_csv(std::istream& in);

/// Scatter of all points plus the envelope as a standalone SVG.
void write_front_svg(std::ostream& out, const std::vector<ParetoPoint>& points, FrontMetric metric);

/// Trains and evaluates one grid entry. Must depend only on its arguments.
using InstanceRunner = std::function<ParetoPoint(const ShapingParams& shaping, std::uint64_t seed, std::size_t index)>;

/// Runs every grid entry with seed derive_seed(root_seed, index), `jobs` at a time.
/// Exceptions mark the entry failed (NaN metrics). Output is in grid order.
std::vector<ParetoPoint> sweep_grid(const SweepGrid& grid, const InstanceRunner& runner, std::uint64_t root_seed,
                                    int jobs = 1);

}  // namespace dxp
