#include "dxp/pareto.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <istream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>
#include <utility>

#include "dxp/error.hpp"

namespace dxp {

namespace {

std::vector<double> log_space(int n, double lo, double hi) {
    std::vector<double> v;
    for (int i = 0; i < n; ++i)
        v.push_back(n == 1 ? lo : lo * std::pow(hi / lo, static_cast<double>(i) / static_cast<double>(n - 1)));
    return v;
}

bool usable(const ParetoPoint& p, FrontMetric m) {
    return !p.failed() && std::isfinite(p.metric(m)) && std::isfinite(p.mean_cost);
}

std::string fixed(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

}  // namespace

SweepGrid SweepGrid::log_grid(int n_lambda, double lambda_lo, double lambda_hi, int n_rho, double rho_lo, double rho_hi) {
    if (n_lambda < 1 || n_rho < 1 || !(lambda_lo > 0.0) || !(lambda_hi >= lambda_lo) || !(rho_lo > 0.0) ||
        !(rho_hi >= rho_lo))
        throw ConfigError("sweep.grid", "ranges must be positive and ordered, counts >= 1");
    SweepGrid g;
    for (double l : log_space(n_lambda, lambda_lo, lambda_hi))
        for (double r : log_space(n_rho, rho_lo, rho_hi)) g.entries.push_back({l, -r});
    return g;
}

SweepGrid SweepGrid::standard() { return log_grid(19, 0.25, 16.0, 10, 0.01, 3.0); }

SweepGrid SweepGrid::am_mode(double class_ratio, const std::vector<double>& rhos) {
    SweepGrid g;
    for (double r : rhos) g.entries.push_back({class_ratio, r});
    return g;
}

void SweepGrid::validate() const {
    std::set<std::pair<double, double>> seen;
    for (const auto& e : entries) {
        e.validate();
        if (!seen.insert({e.lambda, e.rho}).second) throw ConfigError("sweep.grid", "duplicate (lambda, rho) pair");
    }
}

std::vector<ParetoPoint> upper_envelope(const std::vector<ParetoPoint>& points, FrontMetric metric) {
    std::vector<const ParetoPoint*> v;
    for (const auto& p : points)
        if (usable(p, metric)) v.push_back(&p);
    std::sort(v.begin(), v.end(), [metric](const ParetoPoint* a, const ParetoPoint* b) {
        if (a->mean_cost != b->mean_cost) return a->mean_cost < b->mean_cost;
        if (a->metric(metric) != b->metric(metric)) return a->metric(metric) > b->metric(metric);
        if (a->lambda != b->lambda) return a->lambda < b->lambda;
        return a->rho < b->rho;
    });
    std::vector<ParetoPoint> out;
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v.size();) {
        const ParetoPoint* head = v[i];
        if (head->metric(metric) >= best) {
            out.push_back(*head);
            best = head->metric(metric);
        }
        while (i < v.size() && v[i]->mean_cost == head->mean_cost) ++i;
    }
    return out;
}

void write_front_csv(std::ostream& out, const std::vector<ParetoPoint>& points) {
    out << "lambda,rho,f1,am,auroc,mean_cost,tp,tn,fp,fn,seed,checkpoint\n";
    for (const auto& p : points)
        out << format_real(p.lambda) << ',' << format_real(p.rho) << ',' << format_real(p.f1) << ','
            << format_real(p.am) << ',' << format_real(p.auroc) << ',' << format_real(p.mean_cost) << ','
            << format_real(p.tally.tp) << ',' << format_real(p.tally.tn) << ',' << format_real(p.tally.fp) << ','
            << format_real(p.tally.fn) << ',' << p.seed << ',' << p.checkpoint << '\n';
}

std::vector<ParetoPoint> read_front_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || line != "lambda,rho,f1,am,auroc,mean_cost,tp,tn,fp,fn,seed,checkpoint")
        throw ParseError(1, "front CSV: unexpected header");
    std::vector<ParetoPoint> out;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        if (cells.size() != 12) throw ParseError(line_no, "front CSV: expected 12 columns");
        auto num = [&](std::size_t i) {
            char* end = nullptr;
            const double v = std::strtod(cells[i].c_str(), &end);
            if (cells[i].empty() || *end != '\0') throw ParseError(line_no, "front CSV: bad number '" + cells[i] + "'");
            return v;
        };
        ParetoPoint p;
        p.lambda = num(0);
        p.rho = num(1);
        p.f1 = num(2);
        p.am = num(3);
        p.auroc = num(4);
        p.mean_cost = num(5);
        p.tally.tp = num(6);
        p.tally.tn = num(7);
        p.tally.fp = num(8);
        p.tally.fn = num(9);
        try {
            p.seed = std::stoull(cells[10]);
        } catch (const std::exception&) {
            throw ParseError(line_no, "front CSV: bad seed");
        }
        p.checkpoint = cells[11];
        out.push_back(std::move(p));
    }
    return out;
}

void write_front_svg(std::ostream& out, const std::vector<ParetoPoint>& points, FrontMetric metric) {
    const double w = 640, h = 420, ml = 60, mr = 20, mt = 20, mb = 50;
    double xmax = 0.0, ymax = 0.0;
    for (const auto& p : points)
        if (usable(p, metric)) {
            xmax = std::max(xmax, p.mean_cost);
            ymax = std::max(ymax, p.metric(metric));
        }
    xmax = xmax > 0.0 ? xmax * 1.05 : 1.0;
    ymax = ymax > 0.0 ? std::min(1.0, ymax * 1.05) : 1.0;
    auto sx = [&](double c) { return ml + (w - ml - mr) * c / xmax; };
    auto sy = [&](double m) { return h - mb - (h - mt - mb) * m / ymax; };
    const char* label = metric == FrontMetric::F1 ? "F1" : "AM";

    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" viewBox=\"0 0 " << w
        << ' ' << h << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n";
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = xmax * i / 4.0, yv = ymax * i / 4.0;
        out << "<text x=\"" << fixed(sx(xv)) << "\" y=\"" << h - mb + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
            << fixed(xv) << "</text>\n";
        out << "<text x=\"" << ml - 6 << "\" y=\"" << fixed(sy(yv) + 4) << "\" font-size=\"11\" text-anchor=\"end\">"
            << fixed(yv) << "</text>\n";
    }
    out << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 10 << "\" font-size=\"13\" text-anchor=\"middle\">mean testing cost</text>\n";
    out << "<text x=\"16\" y=\"" << (mt + h - mb) / 2 << "\" font-size=\"13\" transform=\"rotate(-90 16 "
        << (mt + h - mb) / 2 << ")\" text-anchor=\"middle\">" << label << "</text>\n";
    for (const auto& p : points)
        if (usable(p, metric))
            out << "<circle cx=\"" << fixed(sx(p.mean_cost)) << "\" cy=\"" << fixed(sy(p.metric(metric)))
                << "\" r=\"3\" fill=\"#4878a8\" fill-opacity=\"0.6\"/>\n";
    const auto env = upper_envelope(points, metric);
    if (!env.empty()) {
        out << "<polyline fill=\"none\" stroke=\"#e0a000\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < env.size(); ++i)
            out << (i ? " " : "") << fixed(sx(env[i].mean_cost)) << ',' << fixed(sy(env[i].metric(metric)));
        out << "\"/>\n";
    }
    out << "</svg>\n";
}

std::vector<ParetoPoint> sweep_grid(const SweepGrid& grid, const InstanceRunner& runner, std::uint64_t root_seed,
                                    int jobs) {
    grid.validate();
    std::vector<ParetoPoint> out(grid.size());
    std::atomic<std::size_t> next{0};
    auto work = [&] {
        for (std::size_t i = next++; i < grid.size(); i = next++) {
            const auto& sh = grid.entries[i];
            const std::uint64_t seed = derive_seed(root_seed, i);
            try {
                out[i] = runner(sh, seed, i);
            } catch (const std::exception&) {
                const double nan = std::numeric_limits<double>::quiet_NaN();
                ParetoPoint p;
                p.f1 = p.am = p.auroc = p.mean_cost = nan;
                p.tally.tp = p.tally.tn = p.tally.fp = p.tally.fn = nan;
                p.checkpoint = "failed";
                out[i] = p;
            }
            out[i].lambda = sh.lambda;
            out[i].rho = sh.rho;
            out[i].seed = seed;
        }
    };
    const int n_threads = std::clamp(jobs, 1, static_cast<int>(std::max<std::size_t>(grid.size(), 1)));
    if (n_threads == 1) {
        work();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < n_threads; ++t) pool.emplace_back(work);
        for (auto& th : pool) th.join();
    }
    return out;
}

}  // namespace dxp
