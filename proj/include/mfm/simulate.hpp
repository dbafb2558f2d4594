#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "mfm/baselines.hpp"
#include "mfm/errors.hpp"
#include "mfm/ihr.hpp"
#include "mfm/inference.hpp"
#include "mfm/metrics.hpp"
#include "mfm/normalize.hpp"
#include "mfm/parallel.hpp"
#include "mfm/rank.hpp"
#include "mfm/rng.hpp"
#include "mfm/types.hpp"

namespace mfm {

enum class ErrorDist { normal, t5, t3 };

inline const char* error_dist_name(ErrorDist d) {
    switch (d) {
    case ErrorDist::normal: return "normal";
    case ErrorDist::t5: return "t5";
    case ErrorDist::t3: return "t3";
    }
    return "?";
}

struct DgpParams {
    Eigen::Index T = 20, p1 = 20, p2 = 20;
    Eigen::Index k1 = 3, k2 = 3;
    double phi = 0.1; // factor AR(1) coefficient
    double psi = 0.1; // error AR(1) coefficient
    ErrorDist error_dist = ErrorDist::normal;
    std::uint64_t seed = 0;

    void validate() const {
        if (T < 1 || p1 < 1 || p2 < 1 || k1 < 1 || k2 < 1)
            throw invalid_argument_error("DgpParams: dimensions must be positive");
        if (!(std::abs(phi) < 1.0) || !(std::abs(psi) < 1.0))
            throw invalid_argument_error("DgpParams: |phi| < 1 and |psi| < 1 required");
    }
};

struct SimulatedData {
    MatrixSeries X;
    Matrix R0, C0;
    std::vector<Matrix> F0;
};

namespace detail {

inline Matrix draw_matrix_normal(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = rng.normal();
    return m;
}

inline Matrix draw_matrix_dist(Rng& rng, Eigen::Index rows, Eigen::Index cols, ErrorDist dist) {
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
        for (Eigen::Index i = 0; i < rows; ++i)
            switch (dist) {
            case ErrorDist::normal: m(i, j) = rng.normal(); break;
            case ErrorDist::t5: m(i, j) = rng.student_t(5); break;
            case ErrorDist::t3: m(i, j) = rng.student_t(3); break;
            }
    return m;
}

} // namespace detail

/// X_t = R0 F0_t C0^T + E_t with U(-1,1) loadings, AR(1) factors driven by
/// standard normal innovations, and AR(1) errors driven by error_dist draws.
/// Both recursions start from their stationary innovation draw. The draw order
/// is fixed (R0, C0 column-major, then per t = 0..T the factor innovation
/// followed by the error innovation), so output is fully determined by seed.
inline SimulatedData generate(const DgpParams& params) {
    params.validate();
    Rng rng(params.seed);
    SimulatedData out;
    out.R0 = Matrix(params.p1, params.k1);
    for (Eigen::Index j = 0; j < params.k1; ++j)
        for (Eigen::Index i = 0; i < params.p1; ++i) out.R0(i, j) = rng.uniform(-1.0, 1.0);
    out.C0 = Matrix(params.p2, params.k2);
    for (Eigen::Index j = 0; j < params.k2; ++j)
        for (Eigen::Index i = 0; i < params.p2; ++i) out.C0(i, j) = rng.uniform(-1.0, 1.0);

    const double f_innov = std::sqrt(1.0 - params.phi * params.phi);
    const double e_innov = std::sqrt(1.0 - params.psi * params.psi);
    Matrix F_prev = detail::draw_matrix_normal(rng, params.k1, params.k2);
    Matrix E_prev = detail::draw_matrix_dist(rng, params.p1, params.p2, params.error_dist);
    out.F0.reserve(static_cast<std::size_t>(params.T));
    std::vector<Matrix> frames;
    frames.reserve(static_cast<std::size_t>(params.T));
    for (Eigen::Index t = 0; t < params.T; ++t) {
        F_prev = params.phi * F_prev + f_innov * detail::draw_matrix_normal(rng, params.k1, params.k2);
        E_prev = params.psi * E_prev +
                 e_innov * detail::draw_matrix_dist(rng, params.p1, params.p2, params.error_dist);
        out.F0.push_back(F_prev);
        frames.push_back(out.R0 * F_prev * out.C0.transpose() + E_prev);
    }
    out.X.data = std::move(frames);
    return out;
}

enum class SimSetting { A, B };

/// Setting A: p1 = 20, T = p2 = n. Setting B: p2 = 20, T = p1 = n.
inline DgpParams setting_params(SimSetting setting, Eigen::Index n, ErrorDist dist,
                                std::uint64_t seed) {
    DgpParams p;
    p.T = n;
    if (setting == SimSetting::A) {
        p.p1 = 20;
        p.p2 = n;
    } else {
        p.p2 = 20;
        p.p1 = n;
    }
    p.error_dist = dist;
    p.seed = seed;
    return p;
}

struct EstimatorErrorSummary {
    double mean_dR = 0.0, sd_dR = 0.0;
    double mean_dC = 0.0, sd_dC = 0.0;
    int failures = 0;
};

namespace detail {

inline void mean_sd(const std::vector<double>& v, double& mean, double& sd) {
    mean = sd = 0.0;
    if (v.empty()) return;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    if (v.size() < 2) return;
    double acc = 0.0;
    for (double x : v) acc += (x - mean) * (x - mean);
    sd = std::sqrt(acc / static_cast<double>(v.size() - 1));
}

} // namespace detail

/// Mean and sd of the subspace distances D(R_hat, R0), D(C_hat, C0) over
/// replications for one estimator and one DGP cell. Replication seeds derive
/// deterministically from the master seed; a failed replication is excluded
/// and counted.
inline EstimatorErrorSummary estimation_error_cell(const DgpParams& base, FitMethod method, int reps,
                                                   std::uint64_t master_seed,
                                                   const IhrOptions& opts_template = IhrOptions{}) {
    if (reps < 2) throw invalid_argument_error("estimation_error_cell: reps >= 2 required");
    std::vector<double> dR(static_cast<std::size_t>(reps), -1.0);
    std::vector<double> dC(static_cast<std::size_t>(reps), -1.0);
    parallel_for(static_cast<std::size_t>(reps), [&](std::size_t rep) {
        DgpParams params = base;
        params.seed = derive_seed(master_seed, rep);
        SimulatedData data = generate(params);
        IhrOptions opts = opts_template;
        opts.init = IhrInit::random_normal(derive_seed(params.seed, 0xA11CE));
        try {
            const FactorFit fit = fit_with_method(data.X, params.k1, params.k2, method, opts);
            dR[rep] = space_distance(fit.R, data.R0);
            dC[rep] = space_distance(fit.C, data.C0);
        } catch (const std::exception&) {
            // recorded as a failure below
        }
    });
    EstimatorErrorSummary sum;
    std::vector<double> okR, okC;
    for (std::size_t r = 0; r < dR.size(); ++r) {
        if (dR[r] >= 0.0) {
            okR.push_back(dR[r]);
            okC.push_back(dC[r]);
        } else {
            ++sum.failures;
        }
    }
    detail::mean_sd(okR, sum.mean_dR, sum.sd_dR);
    detail::mean_sd(okC, sum.mean_dC, sum.sd_dC);
    return sum;
}

struct Table1Row {
    SimSetting setting;
    ErrorDist dist;
    Eigen::Index n; // T (= p2 in Setting A, = p1 in Setting B)
    FitMethod method;
    EstimatorErrorSummary summary;
};

/// The estimation-error table: mean(sd) of the loading-space distances per
/// (n, estimator) cell.
inline std::vector<Table1Row> run_table1(SimSetting setting, ErrorDist dist, int reps,
                                         const std::vector<Eigen::Index>& sizes,
                                         const std::vector<FitMethod>& methods,
                                         std::uint64_t master_seed) {
    std::vector<Table1Row> rows;
    std::uint64_t cell = 0;
    for (Eigen::Index n : sizes)
        for (FitMethod m : methods) {
            const DgpParams params = setting_params(setting, n, dist, 0);
            Table1Row row{setting, dist, n, m,
                          estimation_error_cell(params, m, reps, derive_seed(master_seed, cell))};
            rows.push_back(row);
            ++cell;
        }
    return rows;
}

struct RankFrequencySummary {
    double exact = 0.0; // fraction with (k1_hat, k2_hat) = (k1, k2)
    double under = 0.0; // fraction with k1_hat < k1 or k2_hat < k2
    int failures = 0;
};

struct Table3Cell {
    RankFrequencySummary rm;
    RankFrequencySummary er;
};

/// Exact / underestimation frequencies of both selectors over replications.
inline Table3Cell rank_frequency_cell(const DgpParams& base, int reps, std::uint64_t master_seed,
                                      Eigen::Index m1 = 6, Eigen::Index m2 = 6,
                                      const IhrOptions& opts_template = IhrOptions{}) {
    if (reps < 1) throw invalid_argument_error("rank_frequency_cell: reps >= 1 required");
    std::vector<int> rm_k1(static_cast<std::size_t>(reps), -1), rm_k2(static_cast<std::size_t>(reps), -1);
    std::vector<int> er_k1(static_cast<std::size_t>(reps), -1), er_k2(static_cast<std::size_t>(reps), -1);
    parallel_for(static_cast<std::size_t>(reps), [&](std::size_t rep) {
        DgpParams params = base;
        params.seed = derive_seed(master_seed, rep);
        SimulatedData data = generate(params);
        IhrOptions opts = opts_template;
        opts.init = IhrInit::random_normal(derive_seed(params.seed, 0xA11CE));
        try {
            const RankEstimate est = estimate_ranks(data.X, m1, m2, opts);
            rm_k1[rep] = static_cast<int>(est.rm.k1_hat);
            rm_k2[rep] = static_cast<int>(est.rm.k2_hat);
            er_k1[rep] = static_cast<int>(est.er.k1_hat);
            er_k2[rep] = static_cast<int>(est.er.k2_hat);
        } catch (const std::exception&) {
        }
    });
    Table3Cell cell;
    int ok = 0;
    for (std::size_t r = 0; r < rm_k1.size(); ++r) {
        if (rm_k1[r] < 0) {
            ++cell.rm.failures;
            ++cell.er.failures;
            continue;
        }
        ++ok;
        const int k1 = static_cast<int>(base.k1), k2 = static_cast<int>(base.k2);
        if (rm_k1[r] == k1 && rm_k2[r] == k2) cell.rm.exact += 1.0;
        if (rm_k1[r] < k1 || rm_k2[r] < k2) cell.rm.under += 1.0;
        if (er_k1[r] == k1 && er_k2[r] == k2) cell.er.exact += 1.0;
        if (er_k1[r] < k1 || er_k2[r] < k2) cell.er.under += 1.0;
    }
    if (ok > 0) {
        cell.rm.exact /= ok;
        cell.rm.under /= ok;
        cell.er.exact /= ok;
        cell.er.under /= ok;
    }
    return cell;
}

struct HistogramBin {
    double left = 0.0, right = 0.0;
    int count = 0;
    double density = 0.0;
};

struct NormalityStudyResult {
    std::vector<double> samples; // standardized first coordinates, one per kept rep
    double mean = 0.0;
    double variance = 0.0;
    double ks_distance = -1.0; // to N(0,1); absent (-1) when fewer than 2 samples
    int dropped = 0;           // reps lost to singular covariance or fit failure
    std::vector<HistogramBin> histogram;
};

namespace detail {

inline double ks_to_standard_normal(std::vector<double> samples) {
    std::sort(samples.begin(), samples.end());
    const double n = static_cast<double>(samples.size());
    double ks = 0.0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const double cdf = normal_cdf(samples[i]);
        ks = std::max(ks, std::abs(cdf - static_cast<double>(i) / n));
        ks = std::max(ks, std::abs(static_cast<double>(i + 1) / n - cdf));
    }
    return ks;
}

inline std::vector<HistogramBin> histogram_bins(const std::vector<double>& samples, int nbins) {
    std::vector<HistogramBin> bins;
    if (samples.empty() || nbins < 1) return bins;
    const double lo = *std::min_element(samples.begin(), samples.end());
    const double hi = *std::max_element(samples.begin(), samples.end());
    const double width = (hi > lo) ? (hi - lo) / nbins : 1.0;
    bins.resize(static_cast<std::size_t>(nbins));
    for (int b = 0; b < nbins; ++b) {
        bins[static_cast<std::size_t>(b)].left = lo + b * width;
        bins[static_cast<std::size_t>(b)].right = lo + (b + 1) * width;
    }
    for (double x : samples) {
        int b = static_cast<int>((x - lo) / width);
        b = std::clamp(b, 0, nbins - 1);
        ++bins[static_cast<std::size_t>(b)].count;
    }
    const double n = static_cast<double>(samples.size());
    for (auto& bin : bins) bin.density = bin.count / (n * width);
    return bins;
}

} // namespace detail

/// The loading-normality harness: per replication, fit a preliminary
/// least-squares alternating model, pick tau from its residuals, run the
/// fixed-tau IHR warm-started there, and record the first coordinate of the
/// standardized statistic for the middle row (or column when row = false).
/// The truth triple is re-normalized so the identification constraints hold.
inline NormalityStudyResult run_normality_study(const DgpParams& base, int reps, bool row,
                                                std::uint64_t master_seed, int nbins = 40) {
    if (reps < 1) throw invalid_argument_error("run_normality_study: reps >= 1 required");
    std::vector<double> raw(static_cast<std::size_t>(reps),
                            std::numeric_limits<double>::quiet_NaN());
    parallel_for(static_cast<std::size_t>(reps), [&](std::size_t rep) {
        DgpParams params = base;
        params.seed = derive_seed(master_seed, rep);
        try {
            SimulatedData data = generate(params);
            NormalizedFit truth = normalize_fit(data.R0, data.C0, data.F0);

            IhrOptions prelim_opts;
            prelim_opts.init = IhrInit::alpha_pca();
            const FactorFit prelim =
                ls_alternating_fit(data.X, params.k1, params.k2, prelim_opts);
            const TauSelection tau = select_tau(data.X, prelim);

            IhrOptions opts;
            opts.k1 = params.k1;
            opts.k2 = params.k2;
            opts.huber.tau_policy = TauPolicy::fixed(tau.tau);
            opts.init = IhrInit::warm(prelim.R, prelim.C);
            const FactorFit fit = ihr_fit(data.X, opts);

            Matrix bread, meat;
            if (row) {
                const Eigen::Index i = std::max<Eigen::Index>(params.p1 / 2 - 1, 0); // middle row
                row_covariance(data.X, fit, i, tau.tau, bread, meat);
                raw[rep] = standardized_row_stat(fit, truth.R, i, bread, meat, params.T,
                                                 params.p2)(0);
            } else {
                const Eigen::Index j = std::max<Eigen::Index>(params.p2 / 2 - 1, 0);
                col_covariance(data.X, fit, j, tau.tau, bread, meat);
                raw[rep] = standardized_col_stat(fit, truth.C, j, bread, meat, params.T,
                                                 params.p1)(0);
            }
        } catch (const std::exception&) {
            // dropped and counted below
        }
    });
    NormalityStudyResult res;
    for (double x : raw) {
        if (std::isfinite(x))
            res.samples.push_back(x);
        else
            ++res.dropped;
    }
    double sd = 0.0;
    detail::mean_sd(res.samples, res.mean, sd);
    res.variance = sd * sd;
    if (res.samples.size() >= 2) res.ks_distance = detail::ks_to_standard_normal(res.samples);
    res.histogram = detail::histogram_bins(res.samples, nbins);
    return res;
}

} // namespace mfm
