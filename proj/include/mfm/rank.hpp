#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "mfm/errors.hpp"
#include "mfm/ihr.hpp"
#include "mfm/types.hpp"

namespace mfm {

enum class RankMethod { RM, ER };

struct RankSelection {
    RankMethod method = RankMethod::RM;
    Eigen::Index m1 = 6, m2 = 6;
    Eigen::Index k1_hat = 0, k2_hat = 0;
    Vector sigma1, sigma2; // factor second-moment diagonals of the over-fitted model
    double P1 = 0.0, P2 = 0.0;      // RM thresholds
    double c_alpha_floor = 0.0;     // ER denominator floor
    double D_rate = 0.0;            // min{sqrt(Tp1), sqrt(Tp2), sqrt(p1p2)}
    bool tie_flagged = false;       // ER: all ratios equal, resolved to smallest index
    bool tentative = false;         // over-fitted fit did not converge
};

/// Diagonals of (1/T) sum F_t F_t^T and (1/T) sum F_t^T F_t of a normalized fit.
inline void factor_moment_diagonals(const FactorFit& fit, Vector& sigma1, Vector& sigma2) {
    if (!fit.normalized) throw invalid_argument_error("factor_moment_diagonals: fit must be normalized");
    const Eigen::Index m1 = fit.k1(), m2 = fit.k2();
    Matrix S1 = Matrix::Zero(m1, m1), S2 = Matrix::Zero(m2, m2);
    for (const Matrix& f : fit.F) {
        S1.noalias() += f * f.transpose();
        S2.noalias() += f.transpose() * f;
    }
    S1 /= static_cast<double>(fit.T());
    S2 /= static_cast<double>(fit.T());
    if (detail::max_abs_offdiag_dev(S1 - S1.diagonal().asDiagonal().toDenseMatrix(), false) > 1e-8 ||
        detail::max_abs_offdiag_dev(S2 - S2.diagonal().asDiagonal().toDenseMatrix(), false) > 1e-8)
        throw invalid_argument_error("factor_moment_diagonals: factor moments are not diagonal");
    sigma1 = S1.diagonal();
    sigma2 = S2.diagonal();
}

inline double rate_min_sqrt(Eigen::Index T, Eigen::Index p1, Eigen::Index p2) {
    const double a = std::sqrt(static_cast<double>(T * p1));
    const double b = std::sqrt(static_cast<double>(T * p2));
    const double c = std::sqrt(static_cast<double>(p1 * p2));
    return std::min(a, std::min(b, c));
}

/// Rank minimization: count diagonals above P = sigma_1 * D^{-2/3}.
/// The -2/3 threshold exponent is configurable.
inline RankSelection select_rm(const Vector& sigma1, const Vector& sigma2, Eigen::Index T,
                               Eigen::Index p1, Eigen::Index p2,
                               double threshold_exponent = -2.0 / 3.0) {
    RankSelection sel;
    sel.method = RankMethod::RM;
    sel.m1 = sigma1.size();
    sel.m2 = sigma2.size();
    sel.sigma1 = sigma1;
    sel.sigma2 = sigma2;
    if (sigma1.size() < 1 || sigma2.size() < 1)
        throw invalid_argument_error("select_rm: empty sigma vector");
    if (!(sigma1(0) > 0.0) || !(sigma2(0) > 0.0))
        throw numerical_error("select_rm: degenerate spectrum (no signal)");
    sel.D_rate = rate_min_sqrt(T, p1, p2);
    const double damp = std::pow(sel.D_rate, threshold_exponent);
    sel.P1 = sigma1(0) * damp;
    sel.P2 = sigma2(0) * damp;
    for (Eigen::Index i = 0; i < sigma1.size(); ++i)
        if (sigma1(i) > sel.P1) ++sel.k1_hat;
    for (Eigen::Index j = 0; j < sigma2.size(); ++j)
        if (sigma2(j) > sel.P2) ++sel.k2_hat;
    return sel;
}

namespace detail {

inline Eigen::Index er_argmax(const Vector& sigma, double floor, bool& tie) {
    Eigen::Index best = 0;
    double best_ratio = -1.0;
    bool all_equal = true;
    for (Eigen::Index i = 0; i + 1 < sigma.size(); ++i) {
        const double ratio = sigma(i) / (sigma(i + 1) + floor);
        if (i > 0 && ratio != best_ratio) all_equal = false;
        if (ratio > best_ratio) {
            best_ratio = ratio;
            best = i;
        }
    }
    tie = all_equal && sigma.size() > 2;
    return best + 1; // 1-based count
}

} // namespace detail

/// Eigenvalue ratio: argmax of sigma_i / (sigma_{i+1} + c*alpha), ties to the
/// smallest index.
inline RankSelection select_er(const Vector& sigma1, const Vector& sigma2, Eigen::Index T,
                               Eigen::Index p1, Eigen::Index p2, double c = 1e-4) {
    if (sigma1.size() < 2 || sigma2.size() < 2)
        throw invalid_argument_error("select_er: needs m1 >= 2 and m2 >= 2");
    if (!(c > 0.0)) throw invalid_argument_error("select_er: c must be positive");
    RankSelection sel;
    sel.method = RankMethod::ER;
    sel.m1 = sigma1.size();
    sel.m2 = sigma2.size();
    sel.sigma1 = sigma1;
    sel.sigma2 = sigma2;
    sel.D_rate = rate_min_sqrt(T, p1, p2);
    const double alpha = std::max(1.0 / static_cast<double>(T * p1),
                                  std::max(1.0 / static_cast<double>(T * p2),
                                           1.0 / static_cast<double>(p1 * p2)));
    sel.c_alpha_floor = c * alpha;
    bool tie1 = false, tie2 = false;
    sel.k1_hat = detail::er_argmax(sigma1, sel.c_alpha_floor, tie1);
    sel.k2_hat = detail::er_argmax(sigma2, sel.c_alpha_floor, tie2);
    sel.tie_flagged = tie1 || tie2;
    return sel;
}

/// One over-fitted IHR run at (m1, m2) feeding both selectors.
struct RankEstimate {
    RankSelection rm;
    RankSelection er;
    FactorFit overfit;
};

inline RankEstimate estimate_ranks(const MatrixSeries& series, Eigen::Index m1, Eigen::Index m2,
                                   IhrOptions opts = IhrOptions{}) {
    opts.k1 = m1;
    opts.k2 = m2;
    opts.allow_rank_deficient = true;
    RankEstimate est;
    est.overfit = ihr_fit(series, opts);
    Vector s1, s2;
    factor_moment_diagonals(est.overfit, s1, s2);
    est.rm = select_rm(s1, s2, series.T(), series.p1(), series.p2());
    est.er = select_er(s1, s2, series.T(), series.p1(), series.p2());
    est.rm.tentative = est.er.tentative = !est.overfit.converged;
    return est;
}

} // namespace mfm
