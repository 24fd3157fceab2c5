// Command-line surface for the quantile-sheet estimator: fit a sheet to a
// CSV, predict quantiles from a saved model, and run simulation sweeps.
//
// Exit codes: 0 success, 2 bad input or configuration, 3 numeric failure.

#include "qsheet/qsheet.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace {

using nlohmann::json;

constexpr int kExitOk = 0;
constexpr int kExitInput = 2;
constexpr int kExitNumeric = 3;

struct CliError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// --- CSV -------------------------------------------------------------------

qsheet::Dataset read_xy_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw CliError("cannot open input file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw CliError("empty input file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::string header = line;
    header.erase(std::remove_if(header.begin(), header.end(),
                                [](char c) { return c == ' ' || c == '\t'; }),
                 header.end());
    if (header != "x,y")
        throw CliError("bad header in " + path + ": expected 'x,y', got '" + line + "'");
    qsheet::Dataset d;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::size_t comma = line.find(',');
        if (comma == std::string::npos)
            throw CliError(path + ":" + std::to_string(lineno) + ": expected 'x,y' row");
        try {
            std::size_t used = 0;
            const double x = std::stod(line.substr(0, comma), &used);
            const double y = std::stod(line.substr(comma + 1), &used);
            d.xs.push_back(x);
            d.ys.push_back(y);
        } catch (const std::exception&) {
            throw CliError(path + ":" + std::to_string(lineno) + ": cannot parse numbers");
        }
    }
    if (d.xs.empty()) throw CliError("empty input file: " + path + " (no data rows)");
    return d;
}

// --- config document ---------------------------------------------------------

json load_config(const std::string& path, const std::set<std::string>& allowed) {
    std::ifstream in(path);
    if (!in) throw CliError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CliError("config file " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw CliError("config file " + path + " must hold a JSON object");
    for (const auto& [key, value] : j.items())
        if (!allowed.count(key)) throw CliError("config file " + path + ": unknown key '" + key + "'");
    return j;
}

template <class T>
void take(const json& j, const std::string& key, T& out) {
    if (j.contains(key)) {
        try {
            out = j.at(key).get<T>();
        } catch (const std::exception&) {
            throw CliError("config key '" + key + "' has the wrong type");
        }
    }
}

// --- fit ---------------------------------------------------------------------

struct FitOptions {
    std::string input, output, config;
    int K0_tau = 2, m_tau = 4, K0_x = 4, m_x = 4;
    double lambda_tau = 0.1, lambda_11 = 0.1, lambda_12 = 0.1;
    std::string loss = "exact";
    std::string kernel = "gaussian";
    double bandwidth = 0.0;  // 0: default rule
    std::string optimizer = "backtracking";
    int max_iters = 5000;
    double grad_tol = 1e-4, loss_tol = 1e-8;
    int n_tau_quadrature = 256;
};

int cmd_fit(FitOptions opt) {
    if (!opt.config.empty()) {
        const std::set<std::string> allowed = {
            "K0_tau", "m_tau", "K0_x", "m_x", "lambda_tau", "lambda_11", "lambda_12",
            "loss", "kernel", "bandwidth", "optimizer", "max_iters", "grad_tol",
            "loss_tol", "n_tau_quadrature"};
        const json j = load_config(opt.config, allowed);
        take(j, "K0_tau", opt.K0_tau);
        take(j, "m_tau", opt.m_tau);
        take(j, "K0_x", opt.K0_x);
        take(j, "m_x", opt.m_x);
        take(j, "lambda_tau", opt.lambda_tau);
        take(j, "lambda_11", opt.lambda_11);
        take(j, "lambda_12", opt.lambda_12);
        take(j, "loss", opt.loss);
        take(j, "kernel", opt.kernel);
        take(j, "bandwidth", opt.bandwidth);
        take(j, "optimizer", opt.optimizer);
        take(j, "max_iters", opt.max_iters);
        take(j, "grad_tol", opt.grad_tol);
        take(j, "loss_tol", opt.loss_tol);
        take(j, "n_tau_quadrature", opt.n_tau_quadrature);
    }
    if (opt.loss != "exact" && opt.loss != "smoothed")
        throw CliError("loss must be 'exact' or 'smoothed', got '" + opt.loss + "'");
    if (opt.optimizer != "backtracking" && opt.optimizer != "bb")
        throw CliError("optimizer must be 'backtracking' or 'bb', got '" + opt.optimizer + "'");
    const qsheet::KernelKind kernel = [&] {
        try {
            return qsheet::kernel_from_name(opt.kernel);
        } catch (const std::invalid_argument& e) {
            throw CliError(e.what());
        }
    }();

    const qsheet::Dataset raw = read_xy_csv(opt.input);
    double x_lo = raw.xs[0], x_hi = raw.xs[0];
    for (double x : raw.xs) {
        x_lo = std::min(x_lo, x);
        x_hi = std::max(x_hi, x);
    }
    if (!(x_hi > x_lo)) throw CliError("input x values are all equal; cannot rescale");
    qsheet::Dataset d = raw;
    for (double& x : d.xs) x = (x - x_lo) / (x_hi - x_lo);

    const qsheet::SheetSpec spec =
        qsheet::make_sheet_spec(opt.K0_tau, opt.m_tau, opt.K0_x, opt.m_x);
    const qsheet::PenaltyConfig pen =
        qsheet::build_penalty(spec, opt.lambda_tau, opt.lambda_11, opt.lambda_12);
    qsheet::OptimConfig ocfg;
    ocfg.max_iters = opt.max_iters;
    ocfg.grad_tol = opt.grad_tol;
    ocfg.loss_tol = opt.loss_tol;
    const qsheet::LossKind kind = qsheet::loss_kind_from_name(opt.loss);
    const double h = opt.bandwidth > 0.0 ? opt.bandwidth : qsheet::default_bandwidth(d.n());
    const qsheet::KernelSpec kspec = qsheet::make_kernel(kernel, h);
    const qsheet::QuadratureGrid grid = qsheet::QuadratureGrid::midpoints(opt.n_tau_quadrature);

    const qsheet::FitReport rep =
        opt.optimizer == "bb" ? qsheet::fit_bb(spec, d, pen, ocfg, kind, kspec, grid)
                              : qsheet::fit_backtracking(spec, d, pen, ocfg, kind, kspec, grid);

    qsheet::SheetModel m;
    m.K0_tau = opt.K0_tau;
    m.m_tau = opt.m_tau;
    m.K0_x = opt.K0_x;
    m.m_x = opt.m_x;
    m.beta = rep.final_state.beta;
    m.lambda_tau = opt.lambda_tau;
    m.lambda_11 = opt.lambda_11;
    m.lambda_12 = opt.lambda_12;
    m.x_lo = x_lo;
    m.x_hi = x_hi;
    m.method = opt.loss + "/" + opt.optimizer;
    m.stop_reason = qsheet::stop_reason_name(rep.stop_reason);
    m.final_loss = rep.loss_trace.back();
    m.iterations = rep.iterations;
    m.wall_time = 0.0;  // kept out of the file so refits are byte-identical
    m.converged = rep.stop_reason != qsheet::StopReason::max_iters;

    std::ofstream out(opt.output);
    if (!out) throw CliError("cannot write model file: " + opt.output);
    out << qsheet::model_to_json(m).dump(2) << '\n';

    std::cout << "fit: " << m.method << ", n=" << d.n() << ", stop=" << m.stop_reason
              << ", iterations=" << m.iterations << ", final_loss=" << fmt(m.final_loss)
              << ", wall=" << fmt(rep.wall_time) << "s\n";
    if (rep.stop_reason == qsheet::StopReason::max_iters)
        std::cout << "warning: iteration budget exhausted before a stop rule fired\n";
    return kExitOk;
}

// --- predict -----------------------------------------------------------------

struct PredictOptions {
    std::string model, output;
    std::vector<double> taus, xs;
    int x_grid = 0;
};

int cmd_predict(const PredictOptions& opt) {
    std::ifstream in(opt.model);
    if (!in) throw CliError("cannot open model file: " + opt.model);
    json j;
    try {
        in >> j;
    } catch (const std::exception& e) {
        throw CliError("model file " + opt.model + " is not valid JSON: " + e.what());
    }
    qsheet::SheetModel m;
    try {
        m = qsheet::model_from_json(j);
    } catch (const std::exception& e) {
        throw CliError(std::string("bad model file: ") + e.what());
    }

    if (opt.taus.empty()) throw CliError("predict: need at least one --tau");
    for (double t : opt.taus)
        if (!(t >= 0.0 && t <= 1.0))
            throw CliError("predict: tau " + fmt(t) + " is outside [0,1]");

    std::vector<double> xs = opt.xs;
    if (opt.x_grid > 0) {
        if (!xs.empty()) throw CliError("predict: give either --x or --x-grid, not both");
        if (opt.x_grid < 2) throw CliError("predict: --x-grid needs at least 2 points");
        for (int i = 0; i < opt.x_grid; ++i)
            xs.push_back(m.x_lo + (m.x_hi - m.x_lo) * i / (opt.x_grid - 1.0));
    }
    if (xs.empty()) throw CliError("predict: need --x values or --x-grid");
    const double slack = 1e-12 * std::max(1.0, std::abs(m.x_hi - m.x_lo));
    for (double x : xs)
        if (x < m.x_lo - slack || x > m.x_hi + slack)
            throw CliError("predict: x " + fmt(x) + " is outside the model domain [" +
                           fmt(m.x_lo) + ", " + fmt(m.x_hi) + "]");

    const qsheet::SheetSpec spec = m.spec();
    const qsheet::CoefficientState st = m.state();
    std::vector<double> xs_unit;
    xs_unit.reserve(xs.size());
    for (double x : xs) xs_unit.push_back(std::clamp(m.to_unit(x), 0.0, 1.0));
    const Eigen::MatrixXd q = qsheet::eval_sheet(spec, st, opt.taus, xs_unit);

    std::ostream* os = &std::cout;
    std::ofstream file;
    if (!opt.output.empty()) {
        file.open(opt.output);
        if (!file) throw CliError("cannot write output file: " + opt.output);
        os = &file;
    }
    *os << "tau,x,q\n";
    for (std::size_t r = 0; r < opt.taus.size(); ++r)
        for (std::size_t c = 0; c < xs.size(); ++c)
            *os << fmt(opt.taus[r]) << ',' << fmt(xs[c]) << ','
                << fmt(q(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c))) << '\n';
    return kExitOk;
}

// --- simulate ------------------------------------------------------------------

struct SimulateOptions {
    std::string config, out_dir = ".";
    std::vector<std::string> signals = {"g1"}, noises = {"gaussian"}, scales = {"constant"};
    std::vector<std::string> methods = {"exact"};
    std::vector<int> ns = {128};
    std::vector<double> lambda_grid = {0.5};
    int replications = 2;
    std::uint64_t seed = 1;
    bool center_median = false;
    int K0_tau = 2, m_tau = 4, K0_x = 4, m_x = 4;
    int max_iters = 0;  // 0: library default
    int n_tau_mise = 1024, n_x_mise = 10000;
};

int cmd_simulate(SimulateOptions opt) {
    if (!opt.config.empty()) {
        const std::set<std::string> allowed = {
            "signals", "noises", "scales", "methods", "n", "lambda_grid", "replications",
            "seed", "center_median", "K0_tau", "m_tau", "K0_x", "m_x", "max_iters",
            "n_tau_mise", "n_x_mise"};
        const json j = load_config(opt.config, allowed);
        take(j, "signals", opt.signals);
        take(j, "noises", opt.noises);
        take(j, "scales", opt.scales);
        take(j, "methods", opt.methods);
        take(j, "n", opt.ns);
        take(j, "lambda_grid", opt.lambda_grid);
        take(j, "replications", opt.replications);
        take(j, "seed", opt.seed);
        take(j, "center_median", opt.center_median);
        take(j, "K0_tau", opt.K0_tau);
        take(j, "m_tau", opt.m_tau);
        take(j, "K0_x", opt.K0_x);
        take(j, "m_x", opt.m_x);
        take(j, "max_iters", opt.max_iters);
        take(j, "n_tau_mise", opt.n_tau_mise);
        take(j, "n_x_mise", opt.n_x_mise);
    }

    std::vector<qsheet::Scenario> scenarios;
    try {
        for (const std::string& sig : opt.signals)
            for (const std::string& noi : opt.noises)
                for (const std::string& sca : opt.scales)
                    for (int n : opt.ns) {
                        qsheet::Scenario sc;
                        sc.signal = qsheet::signal_from_name(sig);
                        sc.noise = qsheet::noise_from_name(noi);
                        sc.scale = qsheet::scale_from_name(sca);
                        sc.n = n;
                        sc.replications = opt.replications;
                        sc.seed = opt.seed;
                        sc.center_median = opt.center_median;
                        scenarios.push_back(sc);
                    }
    } catch (const std::invalid_argument& e) {
        throw CliError(e.what());
    }
    if (scenarios.empty() || opt.methods.empty())
        throw CliError("simulate: need at least one scenario and one method");
    for (const std::string& method : opt.methods)
        if (method != "exact" && method != "smoothed" && method != "irls" &&
            method != "two_step")
            throw CliError("simulate: unknown method '" + method + "'");

    qsheet::SweepConfig cfg;
    cfg.K0_tau = opt.K0_tau;
    cfg.m_tau = opt.m_tau;
    cfg.K0_x = opt.K0_x;
    cfg.m_x = opt.m_x;
    cfg.n_tau_mise = opt.n_tau_mise;
    cfg.n_x_mise = opt.n_x_mise;
    if (opt.max_iters > 0) cfg.optim.max_iters = opt.max_iters;

    const std::vector<qsheet::SimResult> results =
        qsheet::run_sweep(scenarios, opt.methods, opt.lambda_grid, cfg);

    // CSV: one summary row per result; wall-clock stays out so reruns with the
    // same seed are byte-identical.
    const std::string csv_path = opt.out_dir + "/results.csv";
    std::ofstream csv(csv_path);
    if (!csv) throw CliError("cannot write " + csv_path);
    csv << "method,signal,noise,scale,n,replicate,seed,lambda,mise_mean_full,"
           "mise_mean_trimmed,crossings,ok,message\n";
    for (const qsheet::SimResult& r : results) {
        std::string msg = r.message;
        std::replace(msg.begin(), msg.end(), ',', ';');
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        csv << r.method << ',' << qsheet::signal_name(r.scenario.signal) << ','
            << qsheet::noise_name(r.scenario.noise) << ','
            << qsheet::scale_name(r.scenario.scale) << ',' << r.scenario.n << ','
            << r.replicate << ',' << r.seed << ',' << fmt(r.lambda_tau) << ','
            << fmt(r.mise_mean_full) << ',' << fmt(r.mise_mean_trimmed) << ',' << r.crossings
            << ',' << (r.ok ? 1 : 0) << ',' << msg << '\n';
    }
    csv.close();

    // JSON: full per-tau MISE vectors plus timing diagnostics.
    json jout = json::array();
    for (const qsheet::SimResult& r : results) {
        json jr;
        jr["method"] = r.method;
        jr["signal"] = qsheet::signal_name(r.scenario.signal);
        jr["noise"] = qsheet::noise_name(r.scenario.noise);
        jr["scale"] = qsheet::scale_name(r.scenario.scale);
        jr["n"] = r.scenario.n;
        jr["replicate"] = r.replicate;
        jr["seed"] = r.seed;
        jr["lambda"] = r.lambda_tau;
        jr["mise_mean_full"] = r.mise_mean_full;
        jr["mise_mean_trimmed"] = r.mise_mean_trimmed;
        jr["crossings"] = r.crossings;
        jr["fit_seconds"] = r.fit_seconds;
        jr["ok"] = r.ok;
        jr["message"] = r.message;
        std::vector<double> by_tau(r.mise_by_tau.data(),
                                   r.mise_by_tau.data() + r.mise_by_tau.size());
        jr["mise_by_tau"] = by_tau;
        jout.push_back(std::move(jr));
    }
    const std::string json_path = opt.out_dir + "/results.json";
    std::ofstream jf(json_path);
    if (!jf) throw CliError("cannot write " + json_path);
    jf << jout.dump(2) << '\n';

    // summary table per method
    std::cout << "method        mean_trimmed_mise  total_crossings  mean_fit_seconds  failures\n";
    for (const std::string& method : opt.methods) {
        double mise_acc = 0.0, sec_acc = 0.0;
        int ok_count = 0, failures = 0, crossings = 0;
        for (const qsheet::SimResult& r : results) {
            if (r.method != method) continue;
            if (r.ok) {
                mise_acc += r.mise_mean_trimmed;
                sec_acc += r.fit_seconds;
                crossings += r.crossings;
                ++ok_count;
            } else {
                ++failures;
            }
        }
        std::printf("%-12s  %17.6g  %15d  %16.3f  %8d\n", method.c_str(),
                    ok_count ? mise_acc / ok_count : 0.0, crossings,
                    ok_count ? sec_acc / ok_count : 0.0, failures);
    }
    std::cout << "wrote " << csv_path << " and " << json_path << '\n';
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Globally non-crossing quantile sheets: fit, predict, simulate"};
    app.require_subcommand(1);

    FitOptions fo;
    CLI::App* fit = app.add_subcommand("fit", "Fit a quantile sheet to a headered x,y CSV");
    fit->add_option("--input", fo.input, "input CSV with header x,y")->required();
    fit->add_option("--out", fo.output, "output model JSON path")->required();
    fit->add_option("--config", fo.config, "JSON config file (unknown keys rejected)");
    fit->add_option("--K0-tau", fo.K0_tau, "interior knots in tau");
    fit->add_option("--m-tau", fo.m_tau, "spline order in tau");
    fit->add_option("--K0-x", fo.K0_x, "interior knots in x");
    fit->add_option("--m-x", fo.m_x, "spline order in x");
    fit->add_option("--lambda-tau", fo.lambda_tau, "tau-direction penalty weight");
    fit->add_option("--lambda-11", fo.lambda_11, "first-tau-block x penalty weight");
    fit->add_option("--lambda-12", fo.lambda_12, "remaining-blocks x penalty weight");
    fit->add_option("--loss", fo.loss, "exact | smoothed");
    fit->add_option("--kernel", fo.kernel, "gaussian | uniform | epanechnikov");
    fit->add_option("--bandwidth", fo.bandwidth, "smoothing bandwidth (0: default rule)");
    fit->add_option("--optimizer", fo.optimizer, "backtracking | bb");
    fit->add_option("--max-iters", fo.max_iters, "iteration budget");
    fit->add_option("--grad-tol", fo.grad_tol, "gradient-ratio stop tolerance");
    fit->add_option("--loss-tol", fo.loss_tol, "relative loss-decrease stop tolerance");
    fit->add_option("--n-tau", fo.n_tau_quadrature, "tau quadrature nodes (smoothed loss)");

    PredictOptions po;
    CLI::App* predict = app.add_subcommand("predict", "Evaluate a fitted sheet");
    predict->add_option("--model", po.model, "model JSON from fit")->required();
    predict->add_option("--out", po.output, "output CSV path (default stdout)");
    predict->add_option("--tau", po.taus, "quantile levels")->delimiter(',');
    predict->add_option("--x", po.xs, "x values (raw scale)")->delimiter(',');
    predict->add_option("--x-grid", po.x_grid, "equally spaced x grid size over the model domain");

    SimulateOptions so;
    CLI::App* simulate = app.add_subcommand("simulate", "Run a simulation sweep");
    simulate->add_option("--config", so.config, "JSON config file (unknown keys rejected)");
    simulate->add_option("--out", so.out_dir, "output directory");
    simulate->add_option("--signals", so.signals, "signal names")->delimiter(',');
    simulate->add_option("--noises", so.noises, "noise names")->delimiter(',');
    simulate->add_option("--scales", so.scales, "scale names")->delimiter(',');
    simulate->add_option("--methods", so.methods, "fit methods")->delimiter(',');
    simulate->add_option("--n", so.ns, "sample sizes")->delimiter(',');
    simulate->add_option("--lambda", so.lambda_grid, "penalty grid")->delimiter(',');
    simulate->add_option("--replications", so.replications, "replications per scenario");
    simulate->add_option("--seed", so.seed, "master seed");
    simulate->add_flag("--center-median", so.center_median, "recenter noise at its median");
    simulate->add_option("--n-tau-mise", so.n_tau_mise, "tau grid size for MISE");
    simulate->add_option("--n-x-mise", so.n_x_mise, "x grid size for MISE");
    simulate->add_option("--max-iters", so.max_iters, "optimizer budget override");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitInput;
    }

    try {
        if (fit->parsed()) return cmd_fit(fo);
        if (predict->parsed()) return cmd_predict(po);
        return cmd_simulate(so);
    } catch (const qsheet::numeric_error& e) {
        std::cerr << "numeric failure: " << e.what() << '\n';
        return kExitNumeric;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitInput;
    }
}
