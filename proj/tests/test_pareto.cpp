#include <doctest.h>

#include <cmath>
#include <set>
#include <sstream>

#include "dxp/error.hpp"
#include "dxp/pareto.hpp"

using namespace dxp;

namespace {

ParetoPoint pt(double cost, double f1, double lambda = 1.0, double rho = -0.1) {
    ParetoPoint p;
    p.mean_cost = cost;
    p.f1 = f1;
    p.am = 1.0 - f1;
    p.lambda = lambda;
    p.rho = rho;
    return p;
}

// Quadratic dominance oracle with the same tie rules.
std::vector<ParetoPoint> envelope_oracle(const std::vector<ParetoPoint>& pts) {
    std::vector<ParetoPoint> keep;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto& p = pts[i];
        bool dominated = false;
        for (std::size_t j = 0; j < pts.size(); ++j) {
            const auto& q = pts[j];
            if (q.mean_cost <= p.mean_cost && q.f1 > p.f1) dominated = true;
            if (q.mean_cost == p.mean_cost && q.f1 == p.f1) {
                const auto kq = std::make_pair(q.lambda, q.rho), kp = std::make_pair(p.lambda, p.rho);
                if (kq < kp || (kq == kp && j < i)) dominated = true;  // exact duplicates keep one copy
            }
        }
        if (!dominated) keep.push_back(p);
    }
    std::sort(keep.begin(), keep.end(), [](const auto& a, const auto& b) { return a.mean_cost < b.mean_cost; });
    return keep;
}

std::string front_csv(const std::vector<ParetoPoint>& pts) {
    std::ostringstream os;
    write_front_csv(os, pts);
    return os.str();
}

}  // namespace

TEST_SUITE("pareto") {

TEST_CASE("grid shapes") {
    const auto g = SweepGrid::standard();
    CHECK(g.size() == 190);
    std::set<std::pair<double, double>> distinct;
    for (const auto& e : g.entries) {
        CHECK(e.lambda >= 0.25 - 1e-12);
        CHECK(e.lambda <= 16.0 + 1e-12);
        CHECK(e.rho <= -0.01 + 1e-12);
        CHECK(e.rho >= -3.0 - 1e-12);
        distinct.insert({e.lambda, e.rho});
    }
    CHECK(distinct.size() == 190);
    const auto am = SweepGrid::am_mode(4.0, {0.0, -0.5, -2.0});
    CHECK(am.size() == 3);
    for (const auto& e : am.entries) CHECK(e.lambda == 4.0);
    SweepGrid dup;
    dup.entries = {{1.0, -0.1}, {1.0, -0.1}};
    CHECK_THROWS_AS(dup.validate(), ConfigError);
}

TEST_CASE("envelope worked example and single point") {
    const std::vector<ParetoPoint> pts{pt(10, 0.3), pt(15, 0.45), pt(20, 0.5), pt(20, 0.4)};
    const auto env = upper_envelope(pts, FrontMetric::F1);
    REQUIRE(env.size() == 3);
    CHECK(env[0].mean_cost == 10);
    CHECK(env[1].f1 == 0.45);
    CHECK(env[2].f1 == 0.5);
    const auto one = upper_envelope({pt(3, 0.2)}, FrontMetric::F1);
    REQUIRE(one.size() == 1);
    CHECK(one[0].f1 == 0.2);
}

TEST_CASE("envelope matches the quadratic oracle on random clouds") {
    Rng rng(1);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<ParetoPoint> pts;
        for (int i = 0; i < 1000; ++i)  // coarse values force ties
            pts.push_back(pt(std::round(uniform01(rng) * 50.0), std::round(uniform01(rng) * 40.0) / 40.0,
                             std::round(uniform01(rng) * 10.0), -std::round(uniform01(rng) * 10.0)));
        const auto env = upper_envelope(pts, FrontMetric::F1);
        const auto oracle = envelope_oracle(pts);
        REQUIRE(env.size() == oracle.size());
        for (std::size_t i = 0; i < env.size(); ++i) {
            CHECK(env[i].mean_cost == oracle[i].mean_cost);
            CHECK(env[i].f1 == oracle[i].f1);
            CHECK(env[i].lambda == oracle[i].lambda);
            CHECK(env[i].rho == oracle[i].rho);
        }
        for (std::size_t i = 1; i < env.size(); ++i) CHECK(env[i].f1 >= env[i - 1].f1);
        CHECK(front_csv(upper_envelope(env, FrontMetric::F1)) == front_csv(env));
        for (const auto& e : env)
            for (const auto& p : pts)
                if (p.mean_cost <= e.mean_cost) CHECK(e.f1 >= p.f1);
    }
}

TEST_CASE("AM selector and failed points") {
    std::vector<ParetoPoint> pts{pt(1, 0.9), pt(2, 0.1)};  // am = 0.1, 0.9
    const auto env = upper_envelope(pts, FrontMetric::AM);
    REQUIRE(env.size() == 2);
    pts.push_back(pt(0, 1.0));
    pts.back().checkpoint = "failed";
    CHECK(upper_envelope(pts, FrontMetric::F1).size() == 1);
}

TEST_CASE("front CSV round trip and parse errors") {
    auto p = pt(12.5, 0.625, 2.0, -0.3);
    p.am = 0.7;
    p.auroc = 0.8;
    p.tally.tp = 0.1;
    p.tally.tn = 0.7;
    p.tally.fp = 0.15;
    p.tally.fn = 0.05;
    p.seed = 1234567890123ULL;
    p.checkpoint = "-";
    const std::string text = front_csv({p, pt(1, 0.1)});
    std::istringstream in(text);
    const auto back = read_front_csv(in);
    REQUIRE(back.size() == 2);
    CHECK(back[0].seed == p.seed);
    CHECK(back[0].tally.fp == 0.15);
    CHECK(front_csv(back) == text);
    std::istringstream bad_header("lambda,rho\n");
    CHECK_THROWS_AS(read_front_csv(bad_header), ParseError);
    std::istringstream bad_cell(text.substr(0, text.find('\n') + 1) + "1,x,0,0,0,0,0,0,0,0,1,-\n");
    try {
        read_front_csv(bad_cell);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
}

TEST_CASE("sweep: grid order, seeds, parallel independence, failure marker") {
    const auto grid = SweepGrid::log_grid(4, 0.5, 8.0, 3, 0.01, 1.0);
    auto runner = [](const ShapingParams& sh, std::uint64_t seed, std::size_t index) {
        if (index == 5) throw TrainingError("diverged");
        Rng rng(seed);
        ParetoPoint p;
        p.f1 = uniform01(rng) * sh.lambda / 8.0;
        p.mean_cost = -sh.rho * 100.0 + uniform01(rng);
        return p;
    };
    const auto a = sweep_grid(grid, runner, 42, 1);
    const auto b = sweep_grid(grid, runner, 42, 4);
    REQUIRE(a.size() == 12);
    CHECK(front_csv(a) == front_csv(b));
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].lambda == grid.entries[i].lambda);
        CHECK(a[i].seed == derive_seed(42, i));
    }
    CHECK(a[5].failed());
    CHECK(std::isnan(a[5].f1));
    const auto one = sweep_grid(SweepGrid{{{2.0, -0.1}}}, runner, 7, 3);
    REQUIRE(one.size() == 1);
    CHECK(one[0].f1 == runner({2.0, -0.1}, derive_seed(7, 0), 0).f1);
}

TEST_CASE("svg output is self-contained") {
    std::ostringstream os;
    write_front_svg(os, {pt(1, 0.2), pt(5, 0.6), pt(3, 0.1)}, FrontMetric::F1);
    const auto s = os.str();
    CHECK(s.rfind("<svg", 0) == 0);
    CHECK(s.find("</svg>") != std::string::npos);
    CHECK(s.find("http://www.w3.org/2000/svg") != std::string::npos);
}

}  // TEST_SUITE
