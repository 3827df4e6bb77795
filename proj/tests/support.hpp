#pragma once

#include <cmath>
#include <functional>

#include <Eigen/Dense>

#include "dxp/dataset.hpp"
#include "dxp/rng.hpp"

namespace dxp::testing {

/// Central finite differences of a scalar function of a flat parameter vector.
inline Eigen::VectorXd numeric_gradient(const std::function<double(const Eigen::VectorXd&)>& f, Eigen::VectorXd x,
                                        double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x[i];
        x[i] = keep + h;
        const double up = f(x);
        x[i] = keep - h;
        const double down = f(x);
        x[i] = keep;
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

/// ‖a − b‖ / max(‖a‖, ‖b‖, floor).
inline double relative_error(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double floor = 1e-8) {
    return (a - b).norm() / std::max({a.norm(), b.norm(), floor});
}

/// Bivariate standard normal pairs with correlation `corr`; each entry missing (MCAR) with probability `miss`.
inline std::vector<MaskedSample> gaussian_mcar(std::size_t n, double corr, double miss, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> g(0.0, 1.0);
    std::vector<MaskedSample> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double a = g(rng), b = g(rng);
        out[i].features = {a, corr * a + std::sqrt(1.0 - corr * corr) * b};
        out[i].source_missing = {0, 0};
        out[i].mask = ObservationMask({static_cast<std::uint8_t>(coin(rng, miss) ? 0 : 1),
                                       static_cast<std::uint8_t>(coin(rng, miss) ? 0 : 1)});
        out[i].record = i;
    }
    return out;
}

}  // namespace dxp::testing
