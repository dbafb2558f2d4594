#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "mfm/errors.hpp"
#include "mfm/huber.hpp"
#include "mfm/types.hpp"

namespace mfm {

/// Standard normal quantile via Wichura's AS 241 rational approximation
/// (absolute error well below 1e-8 over (0, 1)).
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw invalid_argument_error("normal_quantile: p must be in (0,1)");
    const double q = p - 0.5;
    double r, num, den;
    if (std::abs(q) <= 0.425) {
        r = 0.180625 - q * q;
        num = q * (((((((2.5090809287301226727e3 * r + 3.3430575583588128105e4) * r +
                        6.7265770927008700853e4) * r + 4.5921953931549871457e4) * r +
                      1.3731693765509461125e4) * r + 1.9715909503065514427e3) * r +
                    1.3314166789178437745e2) * r + 3.3871328727963666080e0);
        den = (((((((5.2264952788528545610e3 * r + 2.8729085735721942674e4) * r +
                    3.9307895800092710610e4) * r + 2.1213794301586595867e4) * r +
                  5.3941960214247511077e3) * r + 6.8718700749205790830e2) * r +
                4.2313330701600911252e1) * r + 1.0);
        return num / den;
    }
    r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    if (r <= 5.0) {
        r -= 1.6;
        num = (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
                    2.41780725177450611770e-1) * r + 1.27045825245236838258e0) * r +
                  3.64784832476320460504e0) * r + 5.76949722146069140550e0) * r +
                4.63033784615654529590e0) * r + 1.42343711074968357734e0);
        den = (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
                    1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
                  6.89767334985100004550e-1) * r + 1.67638483018380384940e0) * r +
                2.05319162663775882187e0) * r + 1.0);
    } else {
        r -= 5.0;
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                    1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
                  2.96560571828504891230e-1) * r + 1.78482653991729133580e0) * r +
                5.46378491116411436990e0) * r + 6.65790464350110377720e0);
        den = (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
                    1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
                  1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
                5.99832206555887937690e-1) * r + 1.0);
    }
    const double val = num / den;
    return q < 0.0 ? -val : val;
}

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x * 0.7071067811865475244); }

struct TauSelection {
    double tau = 0.0;
    double s_hat = 0.0;
    bool degenerate = false; // all residuals zero; tau floored at 1e-6
};

/// tau = 1.345 * s_hat with s_hat = 1.483 * median |residual| under a
/// preliminary (non-robust) fit.
inline TauSelection select_tau(const MatrixSeries& series, const FactorFit& prelim) {
    prelim.check_consistent();
    if (prelim.T() != series.T() || prelim.p1() != series.p1() || prelim.p2() != series.p2())
        throw invalid_argument_error("select_tau: series/fit dimension mismatch");
    std::vector<double> abs_resid;
    abs_resid.reserve(static_cast<std::size_t>(series.T() * series.p1() * series.p2()));
    for (Eigen::Index t = 0; t < series.T(); ++t) {
        const Matrix resid =
            series[t] - prelim.R * prelim.F[static_cast<std::size_t>(t)] * prelim.C.transpose();
        for (Eigen::Index i = 0; i < resid.rows(); ++i)
            for (Eigen::Index j = 0; j < resid.cols(); ++j)
                abs_resid.push_back(std::abs(resid(i, j)));
    }
    TauSelection sel;
    sel.s_hat = 1.483 * detail::median_inplace(abs_resid);
    sel.tau = 1.345 * sel.s_hat;
    if (!(sel.tau > 0.0)) {
        sel.tau = 1e-6;
        sel.degenerate = true;
    }
    return sel;
}

namespace detail {

inline void check_cov_invertible(const Matrix& M, const char* what) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(M);
    const double lmax = eig.eigenvalues().maxCoeff();
    if (!(lmax > 0.0) || eig.eigenvalues().minCoeff() <= lmax / 1e12)
        throw numerical_error(std::string(what) + ": singular plug-in matrix (widen tau?)");
}

/// M^{-1/2} for symmetric positive definite M; eigenvalues below 1e-12 count
/// as not positive definite.
inline Matrix inv_sqrt_spd(const Matrix& M, const char* what) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (M + M.transpose()));
    if (eig.info() != Eigen::Success) throw numerical_error(std::string(what) + ": eigensolver failed");
    if (eig.eigenvalues().minCoeff() < 1e-12)
        throw numerical_error(std::string(what) + ": matrix is not positive definite");
    const Vector inv_sqrt = eig.eigenvalues().cwiseSqrt().cwiseInverse();
    return eig.eigenvectors() * inv_sqrt.asDiagonal() * eig.eigenvectors().transpose();
}

} // namespace detail

/// Plug-in pieces for the asymptotic variance of r_hat_i:
/// Phi uses the indicator H''(e), Sigma uses min(e^2, tau^2) = [H'(e)]^2.
inline void row_covariance(const MatrixSeries& series, const FactorFit& fit, Eigen::Index i,
                           double tau, Matrix& Phi_hat, Matrix& Sigma_hat) {
    fit.check_consistent();
    if (!(tau > 0.0)) throw invalid_argument_error("row_covariance: tau must be positive");
    if (i < 0 || i >= fit.p1()) throw invalid_argument_error("row_covariance: row index out of range");
    const Eigen::Index T = series.T(), p2 = series.p2(), k1 = fit.k1();
    Phi_hat = Matrix::Zero(k1, k1);
    Sigma_hat = Matrix::Zero(k1, k1);
    const Vector ri = fit.R.row(i).transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
        const Matrix FC = fit.F[static_cast<std::size_t>(t)] * fit.C.transpose(); // k1 x p2
        for (Eigen::Index j = 0; j < p2; ++j) {
            const Vector z = FC.col(j); // F_t c_j
            const double e = series[t](i, j) - ri.dot(z);
            const Matrix outer = z * z.transpose();
            if (std::abs(e) <= tau) Phi_hat += outer;
            Sigma_hat += std::min(e * e, tau * tau) * outer;
        }
    }
    const double scale = 1.0 / static_cast<double>(T * p2);
    Phi_hat *= scale;
    Sigma_hat *= scale;
    detail::check_cov_invertible(Phi_hat, "row_covariance");
}

/// Transpose-symmetric analogue of row_covariance for column loadings.
inline void col_covariance(const MatrixSeries& series, const FactorFit& fit, Eigen::Index j,
                           double tau, Matrix& Psi_hat, Matrix& Sigma_hat) {
    fit.check_consistent();
    if (!(tau > 0.0)) throw invalid_argument_error("col_covariance: tau must be positive");
    if (j < 0 || j >= fit.p2()) throw invalid_argument_error("col_covariance: column index out of range");
    const Eigen::Index T = series.T(), p1 = series.p1(), k2 = fit.k2();
    Psi_hat = Matrix::Zero(k2, k2);
    Sigma_hat = Matrix::Zero(k2, k2);
    const Vector cj = fit.C.row(j).transpose();
    for (Eigen::Index t = 0; t < T; ++t) {
        const Matrix RF = fit.R * fit.F[static_cast<std::size_t>(t)]; // p1 x k2
        for (Eigen::Index i = 0; i < p1; ++i) {
            const Vector z = RF.row(i).transpose(); // F_t^T r_i
            const double e = series[t](i, j) - z.dot(cj);
            const Matrix outer = z * z.transpose();
            if (std::abs(e) <= tau) Psi_hat += outer;
            Sigma_hat += std::min(e * e, tau * tau) * outer;
        }
    }
    const double scale = 1.0 / static_cast<double>(T * p1);
    Psi_hat *= scale;
    Sigma_hat *= scale;
    detail::check_cov_invertible(Psi_hat, "col_covariance");
}

/// sqrt(Tp2) * Sigma^{-1/2} Phi (r_hat_i - H1 r0_i); simulation-only (needs truth).
inline Vector standardized_row_stat(const FactorFit& fit, const Matrix& R0_normalized,
                                    Eigen::Index i, const Matrix& Phi_hat, const Matrix& Sigma_hat,
                                    Eigen::Index T, Eigen::Index p2) {
    const SignMatrix H1 = sign_align(R0_normalized.transpose() * fit.R /
                                     static_cast<double>(fit.p1()));
    const Vector diff = fit.R.row(i).transpose() - H1.apply(R0_normalized.row(i).transpose());
    const Matrix S_inv_sqrt = detail::inv_sqrt_spd(Sigma_hat, "standardized_row_stat");
    return std::sqrt(static_cast<double>(T * p2)) * S_inv_sqrt * Phi_hat * diff;
}

inline Vector standardized_col_stat(const FactorFit& fit, const Matrix& C0_normalized,
                                    Eigen::Index j, const Matrix& Psi_hat, const Matrix& Sigma_hat,
                                    Eigen::Index T, Eigen::Index p1) {
    const SignMatrix H2 = sign_align(C0_normalized.transpose() * fit.C /
                                     static_cast<double>(fit.p2()));
    const Vector diff = fit.C.row(j).transpose() - H2.apply(C0_normalized.row(j).transpose());
    const Matrix S_inv_sqrt = detail::inv_sqrt_spd(Sigma_hat, "standardized_col_stat");
    return std::sqrt(static_cast<double>(T * p1)) * S_inv_sqrt * Psi_hat * diff;
}

struct LoadingInterval {
    double center = 0.0;
    double lower = 0.0;
    double upper = 0.0;
};

/// Per-coordinate sandwich intervals for one loading row (or column).
/// level is the significance level alpha in (0, 1); coverage is 1 - alpha.
inline std::vector<LoadingInterval> loading_confidence_interval(const MatrixSeries& series,
                                                                const FactorFit& fit,
                                                                Eigen::Index index, bool row,
                                                                double tau, double level) {
    if (!(level > 0.0 && level < 1.0))
        throw invalid_argument_error("loading_confidence_interval: level must be in (0,1)");
    Matrix bread, meat;
    double denom;
    Vector center;
    if (row) {
        row_covariance(series, fit, index, tau, bread, meat);
        denom = static_cast<double>(series.T() * series.p2());
        center = fit.R.row(index).transpose();
    } else {
        col_covariance(series, fit, index, tau, bread, meat);
        denom = static_cast<double>(series.T() * series.p1());
        center = fit.C.row(index).transpose();
    }
    const Matrix bread_inv = bread.inverse();
    const Matrix cov = bread_inv * meat * bread_inv / denom;
    const double z = normal_quantile(1.0 - level / 2.0);
    std::vector<LoadingInterval> out;
    out.reserve(static_cast<std::size_t>(center.size()));
    for (Eigen::Index c = 0; c < center.size(); ++c) {
        const double half = z * std::sqrt(std::max(cov(c, c), 0.0));
        out.push_back(LoadingInterval{center(c), center(c) - half, center(c) + half});
    }
    return out;
}

/// Aspect-ratio diagnostic max(p1/(Tp2), Tp2/p1) behind the row-loading CLT.
inline double row_aspect_ratio(Eigen::Index T, Eigen::Index p1, Eigen::Index p2) {
    const double a = static_cast<double>(p1) / static_cast<double>(T * p2);
    return std::max(a, 1.0 / a);
}

struct RowInference {
    Eigen::Index i = 0;
    Matrix Phi_hat, Sigma_hat, cov;
    std::vector<LoadingInterval> intervals;
};

struct ColInference {
    Eigen::Index j = 0;
    Matrix Psi_hat, Sigma_hat, cov;
    std::vector<LoadingInterval> intervals;
};

struct InferenceReport {
    double tau = 0.0;
    double level = 0.05;
    double row_aspect = 0.0, col_aspect = 0.0;
    std::vector<RowInference> rows;
    std::vector<ColInference> cols;
};

/// Full per-row / per-column report at significance level `level`.
inline InferenceReport build_inference_report(const MatrixSeries& series, const FactorFit& fit,
                                              double tau, double level) {
    InferenceReport rep;
    rep.tau = tau;
    rep.level = level;
    rep.row_aspect = row_aspect_ratio(series.T(), series.p1(), series.p2());
    rep.col_aspect = row_aspect_ratio(series.T(), series.p2(), series.p1());
    const double row_denom = static_cast<double>(series.T() * series.p2());
    const double col_denom = static_cast<double>(series.T() * series.p1());
    for (Eigen::Index i = 0; i < series.p1(); ++i) {
        RowInference r;
        r.i = i;
        row_covariance(series, fit, i, tau, r.Phi_hat, r.Sigma_hat);
        const Matrix inv = r.Phi_hat.inverse();
        r.cov = inv * r.Sigma_hat * inv / row_denom;
        r.intervals = loading_confidence_interval(series, fit, i, true, tau, level);
        rep.rows.push_back(std::move(r));
    }
    for (Eigen::Index j = 0; j < series.p2(); ++j) {
        ColInference c;
        c.j = j;
        col_covariance(series, fit, j, tau, c.Psi_hat, c.Sigma_hat);
        const Matrix inv = c.Psi_hat.inverse();
        c.cov = inv * c.Sigma_hat * inv / col_denom;
        c.intervals = loading_confidence_interval(series, fit, j, false, tau, level);
        rep.cols.push_back(std::move(c));
    }
    return rep;
}

} // namespace mfm
