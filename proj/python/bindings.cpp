#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "dxp/error.hpp"
#include "dxp/oracle.hpp"
#include "dxp/pipeline.hpp"

namespace py = pybind11;
using nlohmann::json;

namespace {

dxp::ConfusionTally tally_of(double tp, double tn, double fp, double fn) {
    dxp::ConfusionTally t;
    t.tp = tp;
    t.tn = tn;
    t.fp = fp;
    t.fn = fn;
    t.n_episodes = 1;
    return t;
}

dxp::FrontMetric metric_of(const std::string& m) {
    if (m == "f1") return dxp::FrontMetric::F1;
    if (m == "am") return dxp::FrontMetric::AM;
    throw dxp::ConfigError("metric", "expected 'f1' or 'am'");
}

py::tuple synthetic(const std::string& spec_json, std::uint64_t seed) {
    const auto spec = spec_json.empty() ? dxp::SyntheticSpec::cheap_informative()
                                        : dxp::SyntheticSpec::from_json(json::parse(spec_json));
    const auto data = dxp::generate_synthetic(spec, seed);
    const auto n = static_cast<py::ssize_t>(data.records.size());
    const auto d = static_cast<py::ssize_t>(data.scheme.feature_count());
    py::array_t<double> x({n, d});
    py::array_t<std::int8_t> y(std::vector<py::ssize_t>{n});
    auto xm = x.mutable_unchecked<2>();
    auto ym = y.mutable_unchecked<1>();
    for (py::ssize_t i = 0; i < n; ++i) {
        const auto& r = data.records[static_cast<std::size_t>(i)];
        for (py::ssize_t k = 0; k < d; ++k) xm(i, k) = r.features[static_cast<std::size_t>(k)];
        ym(i) = dxp::is_positive(r.label) ? 1 : 0;
    }
    return py::make_tuple(x, y, data.scheme.to_json().dump());
}

std::string envelope(const std::string& points_json, const std::string& metric) {
    std::vector<dxp::ParetoPoint> pts;
    for (const auto& p : json::parse(points_json)) {
        dxp::ParetoPoint q;
        q.lambda = p.value("lambda", 0.0);
        q.rho = p.value("rho", 0.0);
        q.f1 = p.value("f1", 0.0);
        q.am = p.value("am", 0.0);
        q.mean_cost = p.at("mean_cost").get<double>();
        pts.push_back(q);
    }
    json out = json::array();
    for (const auto& p : dxp::upper_envelope(pts, metric_of(metric)))
        out.push_back({{"lambda", p.lambda}, {"rho", p.rho}, {"f1", p.f1}, {"am", p.am}, {"mean_cost", p.mean_cost}});
    return out.dump();
}

std::string dp_solve(const std::string& instance_json, double lambda, double rho) {
    const dxp::TabularMdp mdp(dxp::TabularInstance::from_json(json::parse(instance_json)));
    const auto sol = dxp::dp_solve_shaped(mdp, {lambda, rho}, mdp.instance().cost_unit());
    return json{{"policy", sol.policy}, {"value", sol.value}, {"tally", sol.tally.to_json()}}.dump();
}

std::string enumerate(const std::string& instance_json) {
    const dxp::TabularMdp mdp(dxp::TabularInstance::from_json(json::parse(instance_json)));
    json out = json::array();
    for (const auto& t : dxp::enumerate_tallies(mdp)) out.push_back(t.to_json());
    return out.dump();
}

std::string certify(const std::string& instance_json) {
    const dxp::TabularMdp mdp(dxp::TabularInstance::from_json(json::parse(instance_json)));
    std::vector<double> rhos;
    for (const auto& e : dxp::SweepGrid::log_grid(1, 1, 1, 10, 0.01, 3.0).entries) rhos.push_back(e.rho);
    rhos.push_back(0.0);
    return json{{"containment", dxp::verify_containment(mdp, dxp::SweepGrid::standard()).to_json()},
                {"am", dxp::verify_am_front(mdp, rhos).to_json()}}
        .dump();
}

int run_command(const std::string& command, const std::string& config_json, const std::string& preset,
                std::uint64_t seed, const std::string& out, const std::string& path, int jobs) {
    const auto cfg = dxp::RunConfig::from_json(config_json.empty() ? json::object() : json::parse(config_json),
                                               dxp::RunConfig::preset(preset));
    dxp::Invocation inv{command, {"python", command}, seed, dxp::resolve_output(out)};
    if (command == "gen-data") return dxp::cmd_gen_data(cfg, inv);
    if (command == "pretrain") return dxp::cmd_pretrain(cfg, inv);
    if (command == "train") return dxp::cmd_train(cfg, inv, path);
    if (command == "sweep") return dxp::cmd_sweep(cfg, inv, path, jobs);
    if (command == "front") return dxp::cmd_front(cfg, inv, path);
    if (command == "oracle") return dxp::cmd_oracle(cfg, inv, jobs);
    if (command == "eval") return dxp::cmd_eval(cfg, inv, path);
    throw dxp::ConfigError("command", "unknown command '" + command + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "C++ core of dxpareto";
    m.attr("__version__") = DXP_VERSION;

    // Translators run newest first, so the subclass goes last.
    py::register_exception<dxp::Error>(m, "Error", PyExc_RuntimeError);
    py::register_exception<dxp::ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("preset", [](const std::string& name) { return dxp::RunConfig::preset(name).to_json().dump(); });
    m.def("synthetic", &synthetic, py::arg("spec_json") = "", py::arg("seed") = 0);
    m.def("f1_score", [](double tp, double tn, double fp, double fn) { return dxp::f1_score(tally_of(tp, tn, fp, fn)); });
    m.def("am_score", [](double tp, double tn, double fp, double fn, double ratio) {
        return dxp::am_score(tally_of(tp, tn, fp, fn), ratio);
    });
    m.def("upper_envelope", &envelope, py::arg("points_json"), py::arg("metric") = "f1");
    m.def("reference_instance", [] { return dxp::TabularInstance::reference().to_json().dump(); });
    m.def("random_instance", [](std::uint64_t seed) {
        dxp::Rng rng(seed);
        return dxp::random_instance({}, rng).to_json().dump();
    });
    m.def("dp_solve", &dp_solve, py::arg("instance_json"), py::arg("lam"), py::arg("rho"));
    m.def("enumerate_tallies", &enumerate);
    m.def("certify", &certify);
    m.def("run", &run_command, py::arg("command"), py::arg("config_json"), py::arg("preset"), py::arg("seed"),
          py::arg("out"), py::arg("path") = "", py::arg("jobs") = 1, py::call_guard<py::gil_scoped_release>());
}
