// mfm: matrix factor model estimation toolkit.
//
// Verbs: simulate | fit | ranks | infer | validate | bench
// Exit codes: 0 success, 2 validation error, 3 numerical failure,
//             4 non-convergence (diagnostics still written).

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "mfm/baselines.hpp"
#include "mfm/ihr.hpp"
#include "mfm/inference.hpp"
#include "mfm/io.hpp"
#include "mfm/metrics.hpp"
#include "mfm/parallel.hpp"
#include "mfm/rank.hpp"
#include "mfm/simulate.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };

LogLevel g_log_level = LogLevel::info;

void init_log_level() {
    const char* env = std::getenv("MFM_LOG");
    if (!env) return;
    const std::string v(env);
    if (v == "error") g_log_level = LogLevel::error;
    else if (v == "warn") g_log_level = LogLevel::warn;
    else if (v == "info") g_log_level = LogLevel::info;
    else if (v == "debug") g_log_level = LogLevel::debug;
}

void log_msg(LogLevel level, const std::string& msg) {
    if (static_cast<int>(level) > static_cast<int>(g_log_level)) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::cerr << "[mfm:" << names[static_cast<int>(level)] << "] " << msg << "\n";
}

struct non_convergence_exit : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- run config

struct RunConfig {
    mfm::DgpParams dgp;
    mfm::IhrOptions ihr;
    Eigen::Index m1 = 6, m2 = 6;              // rank-selection over-fit size
    Eigen::Index bandwidth = 2, horizon = 12; // rolling n, h
    double level = 0.05;                      // inference significance level
};

void reject_unknown_keys(const json& obj, std::initializer_list<const char*> allowed,
                         const std::string& where) {
    if (!obj.is_object()) throw mfm::invalid_data_error("config: " + where + " must be an object");
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const char* k : allowed)
            if (it.key() == k) { ok = true; break; }
        if (!ok)
            throw mfm::invalid_data_error("config: unknown key '" + it.key() + "' in " + where);
    }
}

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream is(path);
    if (!is) throw mfm::invalid_data_error("cannot open config: " + path);
    json doc;
    try {
        is >> doc;
    } catch (const json::exception& e) {
        throw mfm::invalid_data_error(std::string("config: JSON parse error: ") + e.what());
    }
    reject_unknown_keys(doc, {"dgp", "ihr", "ranks", "rolling", "infer"}, "top level");
    if (doc.contains("dgp")) {
        const json& d = doc["dgp"];
        reject_unknown_keys(d, {"T", "p1", "p2", "k1", "k2", "phi", "psi", "dist", "seed"}, "dgp");
        if (d.contains("T")) cfg.dgp.T = d["T"].get<Eigen::Index>();
        if (d.contains("p1")) cfg.dgp.p1 = d["p1"].get<Eigen::Index>();
        if (d.contains("p2")) cfg.dgp.p2 = d["p2"].get<Eigen::Index>();
        if (d.contains("k1")) cfg.dgp.k1 = d["k1"].get<Eigen::Index>();
        if (d.contains("k2")) cfg.dgp.k2 = d["k2"].get<Eigen::Index>();
        if (d.contains("phi")) cfg.dgp.phi = d["phi"].get<double>();
        if (d.contains("psi")) cfg.dgp.psi = d["psi"].get<double>();
        if (d.contains("seed")) cfg.dgp.seed = d["seed"].get<std::uint64_t>();
        if (d.contains("dist")) {
            const std::string name = d["dist"].get<std::string>();
            if (name == "normal") cfg.dgp.error_dist = mfm::ErrorDist::normal;
            else if (name == "t5") cfg.dgp.error_dist = mfm::ErrorDist::t5;
            else if (name == "t3") cfg.dgp.error_dist = mfm::ErrorDist::t3;
            else throw mfm::invalid_data_error("config: dgp.dist must be normal|t5|t3");
        }
    }
    if (doc.contains("ihr")) {
        const json& d = doc["ihr"];
        reject_unknown_keys(d,
                            {"k1", "k2", "tau", "c1", "max_sweeps", "cc_tol_factor",
                             "max_irls_iters", "irls_tol"},
                            "ihr");
        if (d.contains("k1")) cfg.ihr.k1 = d["k1"].get<Eigen::Index>();
        if (d.contains("k2")) cfg.ihr.k2 = d["k2"].get<Eigen::Index>();
        if (d.contains("tau"))
            cfg.ihr.huber.tau_policy = mfm::TauPolicy::fixed(d["tau"].get<double>());
        if (d.contains("c1")) cfg.ihr.huber.c1 = d["c1"].get<double>();
        if (d.contains("max_sweeps")) cfg.ihr.max_sweeps = d["max_sweeps"].get<int>();
        if (d.contains("cc_tol_factor")) cfg.ihr.cc_tol_factor = d["cc_tol_factor"].get<double>();
        if (d.contains("max_irls_iters")) cfg.ihr.huber.max_irls_iters = d["max_irls_iters"].get<int>();
        if (d.contains("irls_tol")) cfg.ihr.huber.irls_tol = d["irls_tol"].get<double>();
    }
    if (doc.contains("ranks")) {
        const json& d = doc["ranks"];
        reject_unknown_keys(d, {"m1", "m2"}, "ranks");
        if (d.contains("m1")) cfg.m1 = d["m1"].get<Eigen::Index>();
        if (d.contains("m2")) cfg.m2 = d["m2"].get<Eigen::Index>();
    }
    if (doc.contains("rolling")) {
        const json& d = doc["rolling"];
        reject_unknown_keys(d, {"bandwidth", "horizon"}, "rolling");
        if (d.contains("bandwidth")) cfg.bandwidth = d["bandwidth"].get<Eigen::Index>();
        if (d.contains("horizon")) cfg.horizon = d["horizon"].get<Eigen::Index>();
    }
    if (doc.contains("infer")) {
        const json& d = doc["infer"];
        reject_unknown_keys(d, {"level"}, "infer");
        if (d.contains("level")) cfg.level = d["level"].get<double>();
    }
    return cfg;
}

// ------------------------------------------------------------------- helpers

mfm::MatrixSeries read_input_tensor(const std::string& path) {
    if (path.empty()) throw mfm::invalid_data_error("--input is required for this command");
    std::ifstream probe(path, std::ios::binary);
    if (!probe) throw mfm::invalid_data_error("cannot open: " + path);
    char magic[4] = {};
    probe.read(magic, 4);
    probe.close();
    if (std::string(magic, 4) == "MFM1") return mfm::io::read_tensor_binary(path);
    return mfm::io::read_tensor_csv(path);
}

mfm::FitMethod parse_method(const std::string& name) {
    if (name == "ihr") return mfm::FitMethod::ihr;
    if (name == "ls") return mfm::FitMethod::ls;
    if (name == "alpha_pca") return mfm::FitMethod::alpha_pca;
    throw mfm::invalid_data_error("--method must be one of ihr|ls|alpha_pca");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw mfm::invalid_data_error("cannot create output dir: " + dir);
}

void write_json(const std::string& path, const json& doc) {
    std::ofstream os(path);
    if (!os) throw mfm::invalid_data_error("cannot open for writing: " + path);
    os << doc.dump(2) << "\n";
}

json fit_diagnostics_json(const mfm::FactorFit& fit) {
    return json{{"converged", fit.converged},
                {"iterations", fit.iterations},
                {"objective", fit.objective_value},
                {"objective_at_init", fit.diagnostics.objective_at_init},
                {"tau_used", fit.diagnostics.tau_used},
                {"final_cc_change", fit.diagnostics.final_cc_change},
                {"ridge_fallback_used", fit.diagnostics.ridge_fallback_used},
                {"k1", fit.k1()},
                {"k2", fit.k2()},
                {"T", fit.T()}};
}

void write_fit_files(const std::string& dir, const mfm::FactorFit& fit) {
    mfm::io::write_matrix_csv(dir + "/R.csv", fit.R);
    mfm::io::write_matrix_csv(dir + "/C.csv", fit.C);
    mfm::io::write_factors_csv(dir + "/F.csv", fit.F);
    write_json(dir + "/diagnostics.json", fit_diagnostics_json(fit));
}

// ------------------------------------------------------------------ commands

int cmd_simulate(const RunConfig& cfg_in, std::uint64_t seed, bool seed_set,
                 const std::string& out_dir) {
    RunConfig cfg = cfg_in;
    if (seed_set) cfg.dgp.seed = seed;
    ensure_dir(out_dir);
    const mfm::SimulatedData data = mfm::generate(cfg.dgp);
    mfm::io::write_tensor_binary(out_dir + "/X.mfm1", data.X);
    mfm::io::write_tensor_csv(out_dir + "/X.csv", data.X);
    mfm::io::write_matrix_csv(out_dir + "/R0.csv", data.R0);
    mfm::io::write_matrix_csv(out_dir + "/C0.csv", data.C0);
    mfm::io::write_factors_csv(out_dir + "/F0.csv", data.F0);
    json manifest{{"command", "simulate"},
                  {"T", cfg.dgp.T},
                  {"p1", cfg.dgp.p1},
                  {"p2", cfg.dgp.p2},
                  {"k1", cfg.dgp.k1},
                  {"k2", cfg.dgp.k2},
                  {"phi", cfg.dgp.phi},
                  {"psi", cfg.dgp.psi},
                  {"dist", mfm::error_dist_name(cfg.dgp.error_dist)},
                  {"seed", cfg.dgp.seed},
                  {"format_version", mfm::io::kVersion},
                  {"timestamp", ""}};
    {
        // The timestamp is confined to this designated manifest field so all
        // other outputs stay byte-identical across reruns.
        std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        manifest["timestamp"] = buf;
    }
    write_json(out_dir + "/manifest.json", manifest);
    log_msg(LogLevel::info, "simulate: wrote tensor + truth files to " + out_dir);
    return 0;
}

int cmd_fit(const std::string& input, const RunConfig& cfg_in, const std::string& method_name,
            Eigen::Index k1, Eigen::Index k2, std::uint64_t seed, bool seed_set,
            const std::string& out_dir) {
    RunConfig cfg = cfg_in;
    if (k1 > 0) cfg.ihr.k1 = k1;
    if (k2 > 0) cfg.ihr.k2 = k2;
    if (seed_set) {
        cfg.ihr.huber.seed = seed;
        cfg.ihr.init.seed = seed;
    }
    const mfm::MatrixSeries series = read_input_tensor(input);
    ensure_dir(out_dir);
    const mfm::FactorFit fit =
        mfm::fit_with_method(series, cfg.ihr.k1, cfg.ihr.k2, parse_method(method_name), cfg.ihr);
    write_fit_files(out_dir, fit);
    log_msg(LogLevel::info, "fit: objective " + std::to_string(fit.objective_value) + " after " +
                                std::to_string(fit.iterations) + " sweeps");
    if (!fit.converged)
        throw non_convergence_exit("fit did not converge within max_sweeps (diagnostics written)");
    return 0;
}

int cmd_ranks(const std::string& input, const RunConfig& cfg_in, std::uint64_t seed, bool seed_set,
              const std::string& out_dir) {
    RunConfig cfg = cfg_in;
    if (seed_set) {
        cfg.ihr.huber.seed = seed;
        cfg.ihr.init.seed = seed;
    }
    if (cfg.m1 < 2 || cfg.m2 < 2)
        throw mfm::invalid_argument_error("ranks: m1 and m2 must be >= 2");
    const mfm::MatrixSeries series = read_input_tensor(input);
    ensure_dir(out_dir);
    const mfm::RankEstimate est = mfm::estimate_ranks(series, cfg.m1, cfg.m2, cfg.ihr);
    auto vec_json = [](const mfm::Vector& v) {
        json arr = json::array();
        for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
        return arr;
    };
    json doc{{"m1", est.rm.m1},
             {"m2", est.rm.m2},
             {"rm", {{"k1_hat", est.rm.k1_hat}, {"k2_hat", est.rm.k2_hat},
                     {"P1", est.rm.P1}, {"P2", est.rm.P2}, {"tentative", est.rm.tentative}}},
             {"er", {{"k1_hat", est.er.k1_hat}, {"k2_hat", est.er.k2_hat},
                     {"c_alpha_floor", est.er.c_alpha_floor},
                     {"tie_flagged", est.er.tie_flagged}, {"tentative", est.er.tentative}}},
             {"sigma1", vec_json(est.rm.sigma1)},
             {"sigma2", vec_json(est.rm.sigma2)}};
    write_json(out_dir + "/ranks.json", doc);
    log_msg(LogLevel::info, "ranks: RM (" + std::to_string(est.rm.k1_hat) + "," +
                                std::to_string(est.rm.k2_hat) + "), ER (" +
                                std::to_string(est.er.k1_hat) + "," +
                                std::to_string(est.er.k2_hat) + ")");
    return 0;
}

int cmd_infer(const std::string& input, const RunConfig& cfg_in, Eigen::Index k1, Eigen::Index k2,
              std::uint64_t seed, bool seed_set, const std::string& truth_R,
              const std::string& truth_C, const std::string& truth_F,
              const std::string& out_dir) {
    RunConfig cfg = cfg_in;
    if (k1 > 0) cfg.ihr.k1 = k1;
    if (k2 > 0) cfg.ihr.k2 = k2;
    if (seed_set) {
        cfg.ihr.huber.seed = seed;
        cfg.ihr.init.seed = seed;
    }
    const mfm::MatrixSeries series = read_input_tensor(input);
    ensure_dir(out_dir);

    // Preliminary least-squares pass sets the robustification scale, then the
    // final fit runs at that fixed tau, warm-started at the preliminary fit.
    mfm::IhrOptions prelim_opts = cfg.ihr;
    prelim_opts.init = mfm::IhrInit::alpha_pca();
    const mfm::FactorFit prelim =
        mfm::ls_alternating_fit(series, cfg.ihr.k1, cfg.ihr.k2, prelim_opts);
    const mfm::TauSelection tau = mfm::select_tau(series, prelim);
    mfm::IhrOptions opts = cfg.ihr;
    opts.huber.tau_policy = mfm::TauPolicy::fixed(tau.tau);
    opts.init = mfm::IhrInit::warm(prelim.R, prelim.C);
    const mfm::FactorFit fit = mfm::ihr_fit(series, opts);

    const mfm::InferenceReport report =
        mfm::build_inference_report(series, fit, tau.tau, cfg.level);

    std::ofstream os(out_dir + "/intervals.csv");
    if (!os) throw mfm::invalid_data_error("cannot open for writing: " + out_dir + "/intervals.csv");
    os << "axis,index,coordinate,estimate,lower,upper,stderr\n";
    for (const auto& r : report.rows)
        for (std::size_t c = 0; c < r.intervals.size(); ++c)
            os << "row," << (r.i + 1) << ',' << (c + 1) << ','
               << mfm::io::detail::format_double(r.intervals[c].center) << ','
               << mfm::io::detail::format_double(r.intervals[c].lower) << ','
               << mfm::io::detail::format_double(r.intervals[c].upper) << ','
               << mfm::io::detail::format_double(
                      std::sqrt(std::max(r.cov(static_cast<Eigen::Index>(c),
                                               static_cast<Eigen::Index>(c)), 0.0)))
               << '\n';
    for (const auto& cc : report.cols)
        for (std::size_t c = 0; c < cc.intervals.size(); ++c)
            os << "col," << (cc.j + 1) << ',' << (c + 1) << ','
               << mfm::io::detail::format_double(cc.intervals[c].center) << ','
               << mfm::io::detail::format_double(cc.intervals[c].lower) << ','
               << mfm::io::detail::format_double(cc.intervals[c].upper) << ','
               << mfm::io::detail::format_double(
                      std::sqrt(std::max(cc.cov(static_cast<Eigen::Index>(c),
                                                static_cast<Eigen::Index>(c)), 0.0)))
               << '\n';
    os.close();

    // Standardized statistics need the full truth triple: the raw loadings
    // must be renormalized to the identified representation before comparing.
    if (!truth_R.empty() || !truth_C.empty() || !truth_F.empty()) {
        if (truth_R.empty() || truth_C.empty() || truth_F.empty())
            throw mfm::invalid_argument_error(
                "infer: --truth-R, --truth-C and --truth-F must be given together");
        const mfm::Matrix R0 = mfm::io::read_matrix_csv(truth_R);
        const mfm::Matrix C0 = mfm::io::read_matrix_csv(truth_C);
        const std::vector<mfm::Matrix> F0 = mfm::io::read_factors_csv(truth_F, R0.cols());
        const mfm::NormalizedFit truth = mfm::normalize_fit(R0, C0, F0);
        std::ofstream ss(out_dir + "/standardized_stats.csv");
        if (!ss)
            throw mfm::invalid_data_error("cannot open for writing: " + out_dir +
                                          "/standardized_stats.csv");
        ss << "axis,index,coordinate,stat\n";
        for (const auto& r : report.rows) {
            const mfm::Vector stat = mfm::standardized_row_stat(
                fit, truth.R, r.i, r.Phi_hat, r.Sigma_hat, series.T(), series.p2());
            for (Eigen::Index c = 0; c < stat.size(); ++c)
                ss << "row," << (r.i + 1) << ',' << (c + 1) << ','
                   << mfm::io::detail::format_double(stat(c)) << '\n';
        }
        for (const auto& cc : report.cols) {
            const mfm::Vector stat = mfm::standardized_col_stat(
                fit, truth.C, cc.j, cc.Psi_hat, cc.Sigma_hat, series.T(), series.p1());
            for (Eigen::Index c = 0; c < stat.size(); ++c)
                ss << "col," << (cc.j + 1) << ',' << (c + 1) << ','
                   << mfm::io::detail::format_double(stat(c)) << '\n';
        }
    }
    write_json(out_dir + "/infer.json",
               json{{"tau", tau.tau},
                    {"s_hat", tau.s_hat},
                    {"tau_degenerate", tau.degenerate},
                    {"level", cfg.level},
                    {"row_aspect", report.row_aspect},
                    {"col_aspect", report.col_aspect},
                    {"fit", fit_diagnostics_json(fit)}});
    log_msg(LogLevel::info, "infer: wrote intervals, tau=" + std::to_string(tau.tau));
    if (!fit.converged)
        throw non_convergence_exit("infer: final fit did not converge (outputs written)");
    return 0;
}

int cmd_validate(const std::string& input, const RunConfig& cfg_in, const std::string& method_name,
                 Eigen::Index k1, Eigen::Index k2, std::uint64_t seed, bool seed_set,
                 const std::string& out_dir) {
    RunConfig cfg = cfg_in;
    if (k1 > 0) cfg.ihr.k1 = k1;
    if (k2 > 0) cfg.ihr.k2 = k2;
    if (seed_set) {
        cfg.ihr.huber.seed = seed;
        cfg.ihr.init.seed = seed;
    }
    const mfm::MatrixSeries series = read_input_tensor(input);
    ensure_dir(out_dir);
    const mfm::RollingReport report =
        mfm::rolling_validate(series, cfg.bandwidth, cfg.horizon, cfg.ihr.k1, cfg.ihr.k2,
                              parse_method(method_name), cfg.ihr);
    std::ofstream os(out_dir + "/rolling_windows.csv");
    if (!os)
        throw mfm::invalid_data_error("cannot open for writing: " + out_dir + "/rolling_windows.csv");
    os << "window,mse,rho,v\n";
    for (const auto& w : report.windows)
        os << w.window_index << ',' << mfm::io::detail::format_double(w.mse) << ','
           << mfm::io::detail::format_double(w.rho) << ','
           << mfm::io::detail::format_double(w.v) << '\n';
    os.close();
    write_json(out_dir + "/rolling.json",
               json{{"bandwidth", report.bandwidth},
                    {"horizon", report.horizon},
                    {"k1", report.k1},
                    {"k2", report.k2},
                    {"method", method_name},
                    {"windows", report.windows.size()},
                    {"skipped", report.skipped},
                    {"mean_mse", report.mean_mse},
                    {"mean_rho", report.mean_rho},
                    {"mean_v", report.mean_v}});
    log_msg(LogLevel::info, "validate: " + std::to_string(report.windows.size()) +
                                " windows, mean MSE " + std::to_string(report.mean_mse));
    return 0;
}

int cmd_bench(const std::string& profile, std::uint64_t seed, const std::string& out_dir) {
    ensure_dir(out_dir);
    int reps;
    std::vector<Eigen::Index> sizes;
    if (profile == "smoke") {
        reps = 5;
        sizes = {20};
    } else if (profile == "desk") {
        reps = 100;
        sizes = {20, 50};
    } else if (profile == "full") {
        reps = 500;
        sizes = {20, 50, 100, 150, 200};
    } else {
        throw mfm::invalid_data_error("--profile must be smoke|desk|full");
    }
    const std::vector<mfm::ErrorDist> dists = {mfm::ErrorDist::normal, mfm::ErrorDist::t5,
                                               mfm::ErrorDist::t3};
    const std::vector<std::pair<mfm::FitMethod, const char*>> methods = {
        {mfm::FitMethod::ihr, "ihr"}, {mfm::FitMethod::alpha_pca, "alpha_pca"}};

    // Estimation-error table: mean (sd) subspace distances per (dist, n, method).
    std::ofstream t1(out_dir + "/table1.csv");
    if (!t1) throw mfm::invalid_data_error("cannot open for writing: " + out_dir + "/table1.csv");
    t1 << "setting,dist,n,method,mean_DR,sd_DR,mean_DC,sd_DC,failures\n";
    for (const mfm::ErrorDist dist : dists) {
        for (const Eigen::Index n : sizes) {
            const mfm::DgpParams base = mfm::setting_params(mfm::SimSetting::A, n, dist, 0);
            for (const auto& [method, name] : methods) {
                const mfm::EstimatorErrorSummary s =
                    mfm::estimation_error_cell(base, method, reps, seed);
                t1 << "A," << mfm::error_dist_name(dist) << ',' << n << ',' << name << ','
                   << s.mean_dR << ',' << s.sd_dR << ',' << s.mean_dC << ',' << s.sd_dC << ','
                   << s.failures << '\n';
                log_msg(LogLevel::info, std::string("bench table1 ") + name + " " +
                                            mfm::error_dist_name(dist) + " n=" + std::to_string(n) +
                                            " D(R)=" + std::to_string(s.mean_dR));
            }
        }
    }
    t1.close();

    // Rank-selection table: exact / underestimation frequencies of RM and ER.
    std::ofstream t3(out_dir + "/table3.csv");
    if (!t3) throw mfm::invalid_data_error("cannot open for writing: " + out_dir + "/table3.csv");
    t3 << "setting,dist,n,selector,exact_freq,under_freq,failures\n";
    for (const mfm::ErrorDist dist : dists) {
        for (const Eigen::Index n : sizes) {
            const mfm::DgpParams base = mfm::setting_params(mfm::SimSetting::A, n, dist, 0);
            const mfm::Table3Cell cell = mfm::rank_frequency_cell(base, reps, seed);
            t3 << "A," << mfm::error_dist_name(dist) << ',' << n << ",rm," << cell.rm.exact << ','
               << cell.rm.under << ',' << cell.rm.failures << '\n';
            t3 << "A," << mfm::error_dist_name(dist) << ',' << n << ",er," << cell.er.exact << ','
               << cell.er.under << ',' << cell.er.failures << '\n';
            log_msg(LogLevel::info, std::string("bench table3 ") + mfm::error_dist_name(dist) +
                                        " n=" + std::to_string(n) +
                                        " RM=" + std::to_string(cell.rm.exact));
        }
    }
    log_msg(LogLevel::info, "bench: wrote table1.csv and table3.csv to " + out_dir);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    init_log_level();
    CLI::App app{"Robust matrix factor model estimation (iterative Huber regression)"};
    app.require_subcommand(1);

    std::string input, config_path, out_dir = ".", method_name = "ihr", profile = "desk";
    std::string truth_R, truth_C, truth_F;
    Eigen::Index k1 = 0, k2 = 0;
    std::uint64_t seed = 0;
    int threads = 0;

    auto add_common = [&](CLI::App* sub, bool needs_input) {
        if (needs_input)
            sub->add_option("--input", input, "Input tensor file (MFM1 binary or long CSV)");
        sub->add_option("--config", config_path, "RunConfig JSON file");
        sub->add_option("--output-dir", out_dir, "Output directory");
        sub->add_option("--seed", seed, "Master RNG seed");
        sub->add_option("--threads", threads, "Worker thread cap (0 = hardware)");
    };

    CLI::App* sim = app.add_subcommand("simulate", "Generate synthetic matrix factor data");
    add_common(sim, false);

    CLI::App* fit = app.add_subcommand("fit", "Fit a factor model to a tensor");
    add_common(fit, true);
    fit->add_option("--method", method_name, "ihr | ls | alpha_pca");
    fit->add_option("--k1", k1, "Row factor count");
    fit->add_option("--k2", k2, "Column factor count");

    CLI::App* ranks = app.add_subcommand("ranks", "Select factor numbers (RM and ER)");
    add_common(ranks, true);

    CLI::App* infer = app.add_subcommand("infer", "Confidence intervals for loadings");
    add_common(infer, true);
    infer->add_option("--k1", k1, "Row factor count");
    infer->add_option("--k2", k2, "Column factor count");
    infer->add_option("--truth-R", truth_R, "True row loadings CSV (enables standardized stats)");
    infer->add_option("--truth-C", truth_C, "True column loadings CSV");
    infer->add_option("--truth-F", truth_F, "True factors CSV (stacked blocks)");

    CLI::App* validate = app.add_subcommand("validate", "Rolling out-of-sample validation");
    add_common(validate, true);
    validate->add_option("--method", method_name, "ihr | ls | alpha_pca");
    validate->add_option("--k1", k1, "Row factor count");
    validate->add_option("--k2", k2, "Column factor count");

    CLI::App* bench = app.add_subcommand("bench", "Monte Carlo benchmark tables");
    add_common(bench, false);
    bench->add_option("--profile", profile, "smoke | desk | full");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (threads < 0) throw mfm::invalid_argument_error("--threads must be >= 0");
        mfm::thread_cap().store(static_cast<unsigned>(threads));
        const RunConfig cfg = load_config(config_path);
        CLI::App* active = app.get_subcommands().front();
        const bool seed_set = active->count("--seed") > 0;
        if (sim->parsed()) return cmd_simulate(cfg, seed, seed_set, out_dir);
        if (fit->parsed())
            return cmd_fit(input, cfg, method_name, k1, k2, seed, seed_set, out_dir);
        if (ranks->parsed()) return cmd_ranks(input, cfg, seed, seed_set, out_dir);
        if (infer->parsed())
            return cmd_infer(input, cfg, k1, k2, seed, seed_set, truth_R, truth_C, truth_F,
                             out_dir);
        if (validate->parsed())
            return cmd_validate(input, cfg, method_name, k1, k2, seed, seed_set, out_dir);
        if (bench->parsed()) return cmd_bench(profile, seed, out_dir);
        std::cerr << "error: no subcommand\n";
        return 2;
    } catch (const non_convergence_exit& e) {
        log_msg(LogLevel::warn, e.what());
        return 4;
    } catch (const mfm::numerical_error& e) {
        log_msg(LogLevel::error, std::string("numerical failure: ") + e.what());
        return 3;
    } catch (const mfm::rank_deficiency_error& e) {
        log_msg(LogLevel::error, std::string("numerical failure: ") + e.what());
        return 3;
    } catch (const std::exception& e) {
        log_msg(LogLevel::error, std::string("validation error: ") + e.what());
        return 2;
    }
}
