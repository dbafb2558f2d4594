#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <cmath>
#include <vector>

#include "mfm/errors.hpp"
#include "mfm/types.hpp"

namespace mfm {

/// Decomposition pieces produced while restoring the identification constraints.
struct NormalizationArtifacts {
    Matrix U_R, Q_R; // thin SVD of R~: R~ = U_R Q_R with Q_R = Lambda V^T
    Matrix U_C, Q_C;
    Matrix Sigma1, Sigma2;   // factor second-moment matrices before rotation
    Matrix Gamma1, Gamma2;   // orthonormal eigenvectors, eigenvalues descending
    Vector Lambda1, Lambda2; // eigenvalue diagonals, non-increasing
};

struct NormalizedFit {
    Matrix R;
    Matrix C;
    std::vector<Matrix> F;
    NormalizationArtifacts artifacts;
};

namespace detail {

/// Eigendecomposition with eigenvalues sorted descending and a deterministic
/// eigenvector sign convention (largest-magnitude coordinate made positive;
/// the first such coordinate on exact ties).
inline void sym_eig_descending(const Matrix& S, Matrix& vectors, Vector& values) {
    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (S + S.transpose()));
    if (eig.info() != Eigen::Success) throw numerical_error("normalize_fit: eigensolver failed");
    const Eigen::Index k = S.rows();
    values = Vector(k);
    vectors = Matrix(k, k);
    for (Eigen::Index j = 0; j < k; ++j) {
        values(j) = eig.eigenvalues()(k - 1 - j);
        Vector v = eig.eigenvectors().col(k - 1 - j);
        Eigen::Index pivot = 0;
        double best = -1.0;
        for (Eigen::Index i = 0; i < k; ++i) {
            if (std::abs(v(i)) > best + 1e-15) {
                best = std::abs(v(i));
                pivot = i;
            }
        }
        if (v(pivot) < 0.0) v = -v;
        vectors.col(j) = v;
    }
}

} // namespace detail

/// Restore R^T R / p1 = I, C^T C / p2 = I and diagonal factor second moments,
/// without changing the common components R F_t C^T.
///
/// R~ = U_R Q_R and C~ = U_C Q_C by thin SVD; Sigma1 and Sigma2 are the
/// (1/(T p1 p2))-scaled second-moment matrices of Q_R F~_t C~^T C~ F~_t^T Q_R^T
/// and its column analogue; their eigenvectors rotate the factors.
///
/// When strict (the default), a rank-deficient R~ or C~ raises
/// rank_deficiency_error; the over-fitted runs behind rank selection pass
/// strict = false and tolerate collapsed trailing columns.
inline NormalizedFit normalize_fit(const Matrix& Rt, const Matrix& Ct,
                                   const std::vector<Matrix>& Ft, bool strict = true) {
    const Eigen::Index p1 = Rt.rows(), k1 = Rt.cols();
    const Eigen::Index p2 = Ct.rows(), k2 = Ct.cols();
    if (Ft.empty()) throw invalid_argument_error("normalize_fit: empty factor sequence");
    for (const Matrix& f : Ft)
        if (f.rows() != k1 || f.cols() != k2)
            throw invalid_argument_error("normalize_fit: factor dimension mismatch");
    if (!Rt.allFinite() || !Ct.allFinite())
        throw invalid_data_error("normalize_fit: non-finite loadings");

    NormalizedFit out;
    NormalizationArtifacts& art = out.artifacts;

    Eigen::JacobiSVD<Matrix> svdR(Rt, Eigen::ComputeThinU | Eigen::ComputeThinV);
    Eigen::JacobiSVD<Matrix> svdC(Ct, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (strict) {
        const double rmax = svdR.singularValues().maxCoeff();
        const double cmax = svdC.singularValues().maxCoeff();
        if (rmax <= 0.0 || svdR.singularValues().minCoeff() <= 1e-12 * rmax)
            throw rank_deficiency_error("normalize_fit: R is rank deficient");
        if (cmax <= 0.0 || svdC.singularValues().minCoeff() <= 1e-12 * cmax)
            throw rank_deficiency_error("normalize_fit: C is rank deficient");
    }
    art.U_R = svdR.matrixU();
    art.Q_R = svdR.singularValues().asDiagonal() * svdR.matrixV().transpose();
    art.U_C = svdC.matrixU();
    art.Q_C = svdC.singularValues().asDiagonal() * svdC.matrixV().transpose();

    const Matrix CtC = Ct.transpose() * Ct;
    const Matrix RtR = Rt.transpose() * Rt;
    const double T = static_cast<double>(Ft.size());
    const double scale = 1.0 / (T * static_cast<double>(p1) * static_cast<double>(p2));
    art.Sigma1 = Matrix::Zero(k1, k1);
    art.Sigma2 = Matrix::Zero(k2, k2);
    for (const Matrix& f : Ft) {
        const Matrix qf = art.Q_R * f;
        art.Sigma1.noalias() += qf * CtC * qf.transpose();
        const Matrix qft = art.Q_C * f.transpose();
        art.Sigma2.noalias() += qft * RtR * qft.transpose();
    }
    art.Sigma1 *= scale;
    art.Sigma2 *= scale;

    detail::sym_eig_descending(art.Sigma1, art.Gamma1, art.Lambda1);
    detail::sym_eig_descending(art.Sigma2, art.Gamma2, art.Lambda2);

    out.R = std::sqrt(static_cast<double>(p1)) * art.U_R * art.Gamma1;
    out.C = std::sqrt(static_cast<double>(p2)) * art.U_C * art.Gamma2;
    const double fs = 1.0 / std::sqrt(static_cast<double>(p1) * static_cast<double>(p2));
    out.F.reserve(Ft.size());
    const Matrix left = fs * art.Gamma1.transpose() * art.Q_R;
    const Matrix right = art.Q_C.transpose() * art.Gamma2;
    for (const Matrix& f : Ft) out.F.push_back(left * f * right);
    return out;
}

} // namespace mfm
