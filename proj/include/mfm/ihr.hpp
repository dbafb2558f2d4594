#pragma once

#include <Eigen/Dense>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "mfm/errors.hpp"
#include "mfm/huber.hpp"
#include "mfm/normalize.hpp"
#include "mfm/parallel.hpp"
#include "mfm/rng.hpp"
#include "mfm/types.hpp"

namespace mfm {

/// Initial (R, C) for the alternating scheme.
struct IhrInit {
    enum class Kind { RandomNormal, Warm, AlphaPca };
    Kind kind = Kind::RandomNormal;
    std::uint64_t seed = 0;
    Matrix R0, C0; // only for Warm

    static IhrInit random_normal(std::uint64_t seed) { return IhrInit{Kind::RandomNormal, seed, {}, {}}; }
    static IhrInit warm(Matrix R0, Matrix C0) {
        return IhrInit{Kind::Warm, 0, std::move(R0), std::move(C0)};
    }
    static IhrInit alpha_pca() { return IhrInit{Kind::AlphaPca, 0, {}, {}}; }
};

struct IhrOptions {
    Eigen::Index k1 = 1;
    Eigen::Index k2 = 1;
    HuberConfig huber;
    int max_sweeps = 100;
    double cc_tol_factor = 1e-4;
    IhrInit init = IhrInit::random_normal(0);
    // Tolerate collapsed trailing factor directions instead of raising
    // rank_deficiency_error; used by the over-fitted runs behind rank selection.
    bool allow_rank_deficient = false;

    void validate(Eigen::Index p1, Eigen::Index p2) const {
        if (k1 < 1 || k2 < 1) throw invalid_argument_error("IhrOptions: k1, k2 must be positive");
        if (k1 > p1 || k2 > p2) throw invalid_argument_error("IhrOptions: k1 <= p1 and k2 <= p2 required");
        if (max_sweeps < 1) throw invalid_argument_error("IhrOptions: max_sweeps >= 1");
        if (!(cc_tol_factor > 0.0)) throw invalid_argument_error("IhrOptions: cc_tol_factor must be positive");
        huber.validate();
    }
};

namespace detail {

inline double max_abs_offdiag_dev(const Matrix& M, bool from_identity) {
    double worst = 0.0;
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j) {
            const double target = (from_identity && i == j) ? 1.0 : 0.0;
            worst = std::max(worst, std::abs(M(i, j) - target));
        }
    return worst;
}

/// sqrt(p) * leading eigenvectors of (1/(T p1 p2)) sum_t X_t X_t^T (rows) and
/// the transposed analogue (columns); the alpha-PCA spectral loadings at alpha=0.
inline void alpha_pca_loadings(const MatrixSeries& series, Eigen::Index k1, Eigen::Index k2,
                               Matrix& R, Matrix& C) {
    const Eigen::Index p1 = series.p1(), p2 = series.p2();
    Matrix MR = Matrix::Zero(p1, p1), MC = Matrix::Zero(p2, p2);
    for (Eigen::Index t = 0; t < series.T(); ++t) {
        MR.noalias() += series[t] * series[t].transpose();
        MC.noalias() += series[t].transpose() * series[t];
    }
    const double scale = 1.0 / static_cast<double>(series.T() * p1 * p2);
    MR *= scale;
    MC *= scale;
    Matrix vecR, vecC;
    Vector valR, valC;
    detail::sym_eig_descending(MR, vecR, valR);
    detail::sym_eig_descending(MC, vecC, valC);
    R = std::sqrt(static_cast<double>(p1)) * vecR.leftCols(k1);
    C = std::sqrt(static_cast<double>(p2)) * vecC.leftCols(k2);
}

/// Project loadings onto the identification constraint via thin SVD:
/// sqrt(p) times the left singular vectors.
inline Matrix orthonormalize_loading(const Matrix& L) {
    Eigen::JacobiSVD<Matrix> svd(L, Eigen::ComputeThinU);
    const double smax = svd.singularValues().maxCoeff();
    if (smax <= 0.0 || svd.singularValues().minCoeff() <= 1e-12 * smax)
        throw rank_deficiency_error("ihr: initial loading matrix is rank deficient");
    return std::sqrt(static_cast<double>(L.rows())) * svd.matrixU();
}

/// Flip loading columns to nonnegative column sums; F rows/cols compensate so
/// the common components are untouched.
inline void fix_column_signs(Matrix& R, Matrix& C, std::vector<Matrix>& F) {
    Vector d1(R.cols()), d2(C.cols());
    for (Eigen::Index a = 0; a < R.cols(); ++a) d1(a) = (R.col(a).sum() >= 0.0) ? 1.0 : -1.0;
    for (Eigen::Index b = 0; b < C.cols(); ++b) d2(b) = (C.col(b).sum() >= 0.0) ? 1.0 : -1.0;
    R = R * d1.asDiagonal();
    C = C * d2.asDiagonal();
    for (Matrix& f : F) f = d1.asDiagonal() * f * d2.asDiagonal();
}

} // namespace detail

/// F_t^(1) = (1/(p1 p2)) R0^T X_t C0, the projection initializer.
/// R0 and C0 must already satisfy the identification constraints.
inline std::vector<Matrix> init_factor_matrices(const MatrixSeries& series, const Matrix& R0hat,
                                                const Matrix& C0hat) {
    const Eigen::Index p1 = series.p1(), p2 = series.p2();
    if (R0hat.rows() != p1 || C0hat.rows() != p2)
        throw invalid_argument_error("init_factor_matrices: loading row dimension mismatch");
    const Matrix gramR = R0hat.transpose() * R0hat / static_cast<double>(p1);
    const Matrix gramC = C0hat.transpose() * C0hat / static_cast<double>(p2);
    if (detail::max_abs_offdiag_dev(gramR, true) > 1e-8 ||
        detail::max_abs_offdiag_dev(gramC, true) > 1e-8)
        throw invalid_argument_error("init_factor_matrices: loadings are not normalized");
    std::vector<Matrix> F;
    F.reserve(static_cast<std::size_t>(series.T()));
    const double scale = 1.0 / static_cast<double>(p1 * p2);
    for (Eigen::Index t = 0; t < series.T(); ++t)
        F.push_back(scale * R0hat.transpose() * series[t] * C0hat);
    return F;
}

/// Row-loading update: each row r_i solves the Huber regression of
/// {x_{t,ij}} on the shared designs {(F_t c_j)^T}; rows are independent.
/// warm (p1 x k1) supplies per-row IRLS starting points; empty means zeros.
inline Matrix update_rows(const MatrixSeries& series, const std::vector<Matrix>& F, const Matrix& C,
                          const HuberConfig& cfg, const Matrix& warm = Matrix(),
                          bool* ridge_used = nullptr) {
    const Eigen::Index T = series.T(), p1 = series.p1(), p2 = series.p2();
    const Eigen::Index k1 = F.front().rows();
    Matrix Z(T * p2, k1);
    for (Eigen::Index t = 0; t < T; ++t) {
        const Matrix FtC = F[static_cast<std::size_t>(t)] * C.transpose(); // k1 x p2
        Z.block(t * p2, 0, p2, k1) = FtC.transpose();
    }
    Matrix out(p1, k1);
    std::atomic<bool> any_ridge{false};
    parallel_for(static_cast<std::size_t>(p1), [&](std::size_t ui) {
        const Eigen::Index i = static_cast<Eigen::Index>(ui);
        Vector y(T * p2);
        for (Eigen::Index t = 0; t < T; ++t) y.segment(t * p2, p2) = series[t].row(i).transpose();
        Vector b0 = (warm.size() > 0) ? warm.row(i).transpose() : Vector(Vector::Zero(k1));
        try {
            IrlsResult r = irls_regress(y, Z, b0, cfg);
            out.row(i) = r.beta.transpose();
            if (r.ridge_used) any_ridge = true;
        } catch (const std::exception& e) {
            throw numerical_error("update_rows: row " + std::to_string(i) + ": " + e.what());
        }
    });
    if (ridge_used) *ridge_used = *ridge_used || any_ridge;
    return out;
}

/// Column-loading update, the transpose-symmetric analogue of update_rows.
inline Matrix update_cols(const MatrixSeries& series, const Matrix& R, const std::vector<Matrix>& F,
                          const HuberConfig& cfg, const Matrix& warm = Matrix(),
                          bool* ridge_used = nullptr) {
    const Eigen::Index T = series.T(), p1 = series.p1(), p2 = series.p2();
    const Eigen::Index k2 = F.front().cols();
    Matrix Z(T * p1, k2);
    for (Eigen::Index t = 0; t < T; ++t) {
        const Matrix RFt = R * F[static_cast<std::size_t>(t)]; // p1 x k2, rows are (F_t^T r_i)^T
        Z.block(t * p1, 0, p1, k2) = RFt;
    }
    Matrix out(p2, k2);
    std::atomic<bool> any_ridge{false};
    parallel_for(static_cast<std::size_t>(p2), [&](std::size_t uj) {
        const Eigen::Index j = static_cast<Eigen::Index>(uj);
        Vector y(T * p1);
        for (Eigen::Index t = 0; t < T; ++t) y.segment(t * p1, p1) = series[t].col(j);
        Vector b0 = (warm.size() > 0) ? warm.row(j).transpose() : Vector(Vector::Zero(k2));
        try {
            IrlsResult r = irls_regress(y, Z, b0, cfg);
            out.row(j) = r.beta.transpose();
            if (r.ridge_used) any_ridge = true;
        } catch (const std::exception& e) {
            throw numerical_error("update_cols: column " + std::to_string(j) + ": " + e.what());
        }
    });
    if (ridge_used) *ridge_used = *ridge_used || any_ridge;
    return out;
}

/// Factor update: for each t, vec(F_t) (column-stacked) solves the Huber
/// regression of {x_{t,ij}} on {c_j kron r_i}; the design is shared across t.
inline std::vector<Matrix> update_factors(const MatrixSeries& series, const Matrix& R,
                                          const Matrix& C, const HuberConfig& cfg,
                                          const std::vector<Matrix>& warm = {},
                                          bool* ridge_used = nullptr) {
    const Eigen::Index T = series.T(), p1 = series.p1(), p2 = series.p2();
    const Eigen::Index k1 = R.cols(), k2 = C.cols();
    Matrix Z(p1 * p2, k1 * k2);
    for (Eigen::Index i = 0; i < p1; ++i)
        for (Eigen::Index j = 0; j < p2; ++j) {
            const Eigen::Index m = i * p2 + j;
            for (Eigen::Index b = 0; b < k2; ++b)
                for (Eigen::Index a = 0; a < k1; ++a) Z(m, b * k1 + a) = C(j, b) * R(i, a);
        }
    std::vector<Matrix> out(static_cast<std::size_t>(T));
    std::atomic<bool> any_ridge{false};
    parallel_for(static_cast<std::size_t>(T), [&](std::size_t ut) {
        const Eigen::Index t = static_cast<Eigen::Index>(ut);
        Vector y(p1 * p2);
        for (Eigen::Index i = 0; i < p1; ++i) y.segment(i * p2, p2) = series[t].row(i).transpose();
        Vector b0 = Vector::Zero(k1 * k2);
        if (!warm.empty()) b0 = Eigen::Map<const Vector>(warm[ut].data(), k1 * k2);
        try {
            IrlsResult r = irls_regress(y, Z, b0, cfg);
            out[ut] = Eigen::Map<const Matrix>(r.beta.data(), k1, k2);
            if (r.ridge_used) any_ridge = true;
        } catch (const std::exception& e) {
            throw numerical_error("update_factors: t=" + std::to_string(t) + ": " + e.what());
        }
    });
    if (ridge_used) *ridge_used = *ridge_used || any_ridge;
    return out;
}

namespace detail {

/// Effective robustification scale of the final iterate: the fixed tau, or the
/// adaptive rule's c1/c2 evaluated on the full residual tensor.
inline double effective_tau(const MatrixSeries& series, const FactorFit& fit,
                            const HuberConfig& cfg) {
    if (cfg.tau_policy.kind == TauPolicy::Kind::Fixed) return cfg.tau_policy.tau;
    std::vector<double> abs_resid;
    abs_resid.reserve(static_cast<std::size_t>(series.T() * series.p1() * series.p2()));
    for (Eigen::Index t = 0; t < series.T(); ++t) {
        const Matrix resid =
            series[t] - fit.R * fit.F[static_cast<std::size_t>(t)] * fit.C.transpose();
        for (Eigen::Index i = 0; i < resid.rows(); ++i)
            for (Eigen::Index j = 0; j < resid.cols(); ++j) abs_resid.push_back(std::abs(resid(i, j)));
    }
    const double med = median_inplace(abs_resid);
    return std::max(cfg.c1 * med / 0.6745, 1e-12);
}

} // namespace detail

/// Alternating Huber regressions with per-sweep normalization; stops when the
/// common components of adjacent sweeps move by at most
/// cc_tol_factor * T * p1 * p2 in summed Frobenius norm.
inline FactorFit ihr_fit(const MatrixSeries& series, const IhrOptions& opts) {
    series.validate();
    const Eigen::Index T = series.T(), p1 = series.p1(), p2 = series.p2();
    opts.validate(p1, p2);

    Matrix R, C;
    switch (opts.init.kind) {
    case IhrInit::Kind::RandomNormal: {
        Rng rng(opts.init.seed);
        R = Matrix(p1, opts.k1);
        for (Eigen::Index j = 0; j < opts.k1; ++j)
            for (Eigen::Index i = 0; i < p1; ++i) R(i, j) = rng.normal();
        C = Matrix(p2, opts.k2);
        for (Eigen::Index j = 0; j < opts.k2; ++j)
            for (Eigen::Index i = 0; i < p2; ++i) C(i, j) = rng.normal();
        break;
    }
    case IhrInit::Kind::Warm:
        if (opts.init.R0.rows() != p1 || opts.init.R0.cols() != opts.k1 ||
            opts.init.C0.rows() != p2 || opts.init.C0.cols() != opts.k2)
            throw invalid_argument_error("ihr_fit: warm start dimensions mismatch");
        R = opts.init.R0;
        C = opts.init.C0;
        break;
    case IhrInit::Kind::AlphaPca:
        detail::alpha_pca_loadings(series, opts.k1, opts.k2, R, C);
        break;
    }
    R = detail::orthonormalize_loading(R);
    C = detail::orthonormalize_loading(C);

    std::vector<Matrix> F = init_factor_matrices(series, R, C);
    const Matrix R_init = R, C_init = C;
    const std::vector<Matrix> F_init = F;

    std::vector<Matrix> S_prev;
    S_prev.reserve(static_cast<std::size_t>(T));
    for (Eigen::Index t = 0; t < T; ++t)
        S_prev.push_back(R * F[static_cast<std::size_t>(t)] * C.transpose());

    FactorFit fit;
    fit.normalized = true;
    bool ridge = false;
    double cc_change = 0.0;
    const double cc_threshold = opts.cc_tol_factor * static_cast<double>(T * p1 * p2);

    int sweep = 0;
    for (; sweep < opts.max_sweeps; ++sweep) {
        Matrix R_new = update_rows(series, F, C, opts.huber, R, &ridge);
        Matrix C_new = update_cols(series, R_new, F, opts.huber, C, &ridge);
        std::vector<Matrix> F_new = update_factors(series, R_new, C_new, opts.huber, F, &ridge);

        NormalizedFit norm = normalize_fit(R_new, C_new, F_new, !opts.allow_rank_deficient);
        if (!opts.allow_rank_deficient &&
            (norm.artifacts.Lambda1.minCoeff() < 1e-12 || norm.artifacts.Lambda2.minCoeff() < 1e-12))
            throw rank_deficiency_error("ihr_fit: factor second-moment diagonal underflow at sweep " +
                                        std::to_string(sweep + 1));
        R = std::move(norm.R);
        C = std::move(norm.C);
        F = std::move(norm.F);
        detail::fix_column_signs(R, C, F);
        if (!R.allFinite() || !C.allFinite())
            throw numerical_error("ihr_fit: non-finite iterate at sweep " + std::to_string(sweep + 1));

        cc_change = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) {
            const Matrix S_t = R * F[static_cast<std::size_t>(t)] * C.transpose();
            cc_change += (S_t - S_prev[static_cast<std::size_t>(t)]).norm();
            S_prev[static_cast<std::size_t>(t)] = S_t;
        }
        if (cc_change <= cc_threshold) {
            fit.converged = true;
            ++sweep;
            break;
        }
    }

    fit.R = std::move(R);
    fit.C = std::move(C);
    fit.F = std::move(F);
    fit.iterations = sweep;
    fit.diagnostics.final_cc_change = cc_change;
    fit.diagnostics.ridge_fallback_used = ridge;
    fit.diagnostics.tau_used = detail::effective_tau(series, fit, opts.huber);
    fit.objective_value = evaluate_objective(series, fit, fit.diagnostics.tau_used);
    FactorFit init_fit;
    init_fit.R = R_init;
    init_fit.C = C_init;
    init_fit.F = F_init;
    fit.diagnostics.objective_at_init = evaluate_objective(series, init_fit, fit.diagnostics.tau_used);
    return fit;
}

} // namespace mfm
