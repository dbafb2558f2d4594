#pragma once

#include <Eigen/Dense>
#include <Eigen/QR>
#include <algorithm>
#include <cmath>
#include <vector>

#include "mfm/baselines.hpp"
#include "mfm/errors.hpp"
#include "mfm/ihr.hpp"
#include "mfm/types.hpp"

namespace mfm {

/// D(Q1, Q2) = sqrt(1 - Tr(Q1 Q1^T Q2 Q2^T) / max(q1, q2)) on [0, 1];
/// inputs are column-orthonormalized internally.
inline double space_distance(const Matrix& Q1, const Matrix& Q2) {
    if (Q1.rows() != Q2.rows()) throw invalid_argument_error("space_distance: row dimension mismatch");
    if (Q1.cols() < 1 || Q2.cols() < 1) throw invalid_argument_error("space_distance: empty matrix");
    for (const Matrix* Q : {&Q1, &Q2})
        for (Eigen::Index j = 0; j < Q->cols(); ++j)
            if (Q->col(j).norm() == 0.0)
                throw invalid_argument_error("space_distance: zero column");
    Eigen::HouseholderQR<Matrix> qr1(Q1), qr2(Q2);
    const Matrix O1 = qr1.householderQ() * Matrix::Identity(Q1.rows(), Q1.cols());
    const Matrix O2 = qr2.householderQ() * Matrix::Identity(Q2.rows(), Q2.cols());
    const double tr = (O1.transpose() * O2).squaredNorm(); // Tr(Q1 Q1^T Q2 Q2^T)
    const double q = static_cast<double>(std::max(Q1.cols(), Q2.cols()));
    const double inside = std::clamp(1.0 - tr / q, 0.0, 1.0);
    return std::sqrt(inside);
}

enum class FitMethod { ihr, ls, alpha_pca };

inline FactorFit fit_with_method(const MatrixSeries& series, Eigen::Index k1, Eigen::Index k2,
                                 FitMethod method, const IhrOptions& base = IhrOptions{}) {
    IhrOptions opts = base;
    opts.k1 = k1;
    opts.k2 = k2;
    switch (method) {
    case FitMethod::ihr: return ihr_fit(series, opts);
    case FitMethod::ls: return ls_alternating_fit(series, k1, k2, opts);
    case FitMethod::alpha_pca: return alpha_pca_fit(series, k1, k2);
    }
    throw invalid_argument_error("fit_with_method: unknown method");
}

struct RollingWindow {
    int window_index = 0;
    double mse = 0.0;
    double rho = 0.0;
    double v = 0.0; // loading-space variation vs the previous window; 0 for the first
};

struct RollingReport {
    std::vector<RollingWindow> windows;
    double mean_mse = 0.0;
    double mean_rho = 0.0;
    double mean_v = 0.0; // over windows after the first
    int skipped = 0;     // windows whose fit failed
    Eigen::Index bandwidth = 0, horizon = 0, k1 = 0, k2 = 0;
    FitMethod method = FitMethod::ihr;
};

/// Rolling out-of-sample validation: fit loadings on the trailing n*h
/// observations, project the next h held-out matrices, report per-window
/// MSE, unexplained proportion rho, and loading-space variation v.
inline RollingReport rolling_validate(const MatrixSeries& series, Eigen::Index bandwidth,
                                      Eigen::Index horizon, Eigen::Index k1, Eigen::Index k2,
                                      FitMethod method, const IhrOptions& base = IhrOptions{}) {
    series.validate();
    const Eigen::Index T = series.T(), p1 = series.p1(), p2 = series.p2();
    const Eigen::Index train = bandwidth * horizon;
    if (bandwidth < 1 || horizon < 1) throw invalid_argument_error("rolling_validate: n, h must be >= 1");
    if (T < train + horizon)
        throw invalid_argument_error("rolling_validate: need T >= n*h + h");

    RollingReport report;
    report.bandwidth = bandwidth;
    report.horizon = horizon;
    report.k1 = k1;
    report.k2 = k2;
    report.method = method;

    const Eigen::Index n_windows = (T - train) / horizon;
    Matrix prev_R, prev_C;
    bool have_prev = false;
    double acc_mse = 0.0, acc_rho = 0.0, acc_v = 0.0;
    int counted = 0, v_counted = 0;

    for (Eigen::Index w = 0; w < n_windows; ++w) {
        const Eigen::Index test_start = train + w * horizon;
        std::vector<Matrix> train_frames(series.data.begin() + (test_start - train),
                                         series.data.begin() + test_start);
        MatrixSeries train_series;
        train_series.data = std::move(train_frames);

        FactorFit fit;
        try {
            fit = fit_with_method(train_series, k1, k2, method, base);
        } catch (const std::exception&) {
            ++report.skipped;
            have_prev = false;
            continue;
        }

        Matrix train_mean = Matrix::Zero(p1, p2);
        for (Eigen::Index t = test_start - train; t < test_start; ++t) train_mean += series[t];
        train_mean /= static_cast<double>(train);

        const double proj_scale = 1.0 / static_cast<double>(p1 * p2);
        double err_sq = 0.0, base_sq = 0.0;
        for (Eigen::Index s = 0; s < horizon; ++s) {
            const Matrix& Y = series[test_start + s];
            const Matrix Fhat = proj_scale * fit.R.transpose() * Y * fit.C;
            const Matrix Yhat = fit.R * Fhat * fit.C.transpose();
            err_sq += (Yhat - Y).squaredNorm();
            base_sq += (Y - train_mean).squaredNorm();
        }

        RollingWindow rec;
        rec.window_index = static_cast<int>(w);
        rec.mse = err_sq / static_cast<double>(horizon * p1 * p2);
        rec.rho = base_sq > 0.0 ? err_sq / base_sq : 0.0;
        if (have_prev) {
            Matrix kron_now(p1 * p2, k1 * k2), kron_prev(p1 * p2, k1 * k2);
            auto kron = [&](const Matrix& Cm, const Matrix& Rm, Matrix& out) {
                for (Eigen::Index b = 0; b < k2; ++b)
                    for (Eigen::Index a = 0; a < k1; ++a)
                        for (Eigen::Index j = 0; j < p2; ++j)
                            out.block(j * p1, b * k1 + a, p1, 1) = Cm(j, b) * Rm.col(a);
            };
            kron(fit.C, fit.R, kron_now);
            kron(prev_C, prev_R, kron_prev);
            rec.v = space_distance(kron_now, kron_prev);
            acc_v += rec.v;
            ++v_counted;
        }
        prev_R = fit.R;
        prev_C = fit.C;
        have_prev = true;

        acc_mse += rec.mse;
        acc_rho += rec.rho;
        ++counted;
        report.windows.push_back(rec);
    }
    if (counted > 0) {
        report.mean_mse = acc_mse / counted;
        report.mean_rho = acc_rho / counted;
    }
    if (v_counted > 0) report.mean_v = acc_v / v_counted;
    return report;
}

} // namespace mfm
