#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mfm/errors.hpp"

namespace mfm {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// An ordered sequence of T real p1 x p2 matrices X_1, ..., X_T.
///
/// The canonical flat layout (used by file IO) is t-major, then row-major
/// within each matrix: element (t, i, j) lives at t*p1*p2 + i*p2 + j.
struct MatrixSeries {
    std::vector<Matrix> data;

    MatrixSeries() = default;
    explicit MatrixSeries(std::vector<Matrix> frames) : data(std::move(frames)) { validate(); }

    Eigen::Index T() const { return static_cast<Eigen::Index>(data.size()); }
    Eigen::Index p1() const { return data.empty() ? 0 : data.front().rows(); }
    Eigen::Index p2() const { return data.empty() ? 0 : data.front().cols(); }

    const Matrix& operator[](Eigen::Index t) const { return data[static_cast<std::size_t>(t)]; }
    Matrix& operator[](Eigen::Index t) { return data[static_cast<std::size_t>(t)]; }

    void validate() const {
        if (data.empty()) throw invalid_argument_error("MatrixSeries: T must be >= 1");
        const Eigen::Index r = data.front().rows(), c = data.front().cols();
        if (r < 1 || c < 1) throw invalid_argument_error("MatrixSeries: p1, p2 must be >= 1");
        for (const Matrix& m : data) {
            if (m.rows() != r || m.cols() != c)
                throw invalid_argument_error("MatrixSeries: all matrices must share dimensions");
            if (!m.allFinite())
                throw invalid_data_error("MatrixSeries: non-finite entry");
        }
    }

    std::vector<double> to_flat() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(T() * p1() * p2()));
        for (const Matrix& m : data)
            for (Eigen::Index i = 0; i < m.rows(); ++i)
                for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
        return out;
    }

    static MatrixSeries from_flat(const std::vector<double>& flat, Eigen::Index T,
                                  Eigen::Index p1, Eigen::Index p2) {
        if (T < 1 || p1 < 1 || p2 < 1) throw invalid_argument_error("MatrixSeries: bad dimensions");
        if (static_cast<Eigen::Index>(flat.size()) != T * p1 * p2)
            throw invalid_argument_error("MatrixSeries: payload length != T*p1*p2");
        std::vector<Matrix> frames(static_cast<std::size_t>(T), Matrix(p1, p2));
        std::size_t k = 0;
        for (Eigen::Index t = 0; t < T; ++t)
            for (Eigen::Index i = 0; i < p1; ++i)
                for (Eigen::Index j = 0; j < p2; ++j) frames[static_cast<std::size_t>(t)](i, j) = flat[k++];
        MatrixSeries s;
        s.data = std::move(frames);
        s.validate();
        return s;
    }
};

/// Extra per-fit diagnostics recorded by the estimators.
struct FitDiagnostics {
    double objective_at_init = 0.0;   // objective at the initialized iterate, same tau as objective_value
    double tau_used = 0.0;            // fixed tau, or the last effective tau under the adaptive rule
    double final_cc_change = 0.0;     // sum_t ||S_t^(s+1) - S_t^(s)||_F at the last sweep
    bool ridge_fallback_used = false; // some inner weighted normal equations needed a ridge jitter
};

/// Estimated loadings and factor scores: R (p1 x k1), C (p2 x k2), F_t (k1 x k2).
struct FactorFit {
    Matrix R;
    Matrix C;
    std::vector<Matrix> F;
    bool normalized = false;
    double objective_value = 0.0;
    int iterations = 0;
    bool converged = false;
    FitDiagnostics diagnostics;

    Eigen::Index p1() const { return R.rows(); }
    Eigen::Index p2() const { return C.rows(); }
    Eigen::Index k1() const { return R.cols(); }
    Eigen::Index k2() const { return C.cols(); }
    Eigen::Index T() const { return static_cast<Eigen::Index>(F.size()); }

    void check_consistent() const {
        if (k1() > p1() || k2() > p2())
            throw invalid_argument_error("FactorFit: k1 <= p1 and k2 <= p2 required");
        for (const Matrix& f : F)
            if (f.rows() != k1() || f.cols() != k2())
                throw invalid_argument_error("FactorFit: F_t dimensions inconsistent with loadings");
    }
};

/// Diagonal +-1 matrix, stored as its diagonal.
struct SignMatrix {
    Vector d;

    Eigen::Index size() const { return d.size(); }
    Matrix dense() const { return d.asDiagonal(); }
    Vector apply(const Vector& x) const { return d.cwiseProduct(x); }
};

/// sgn of the diagonal of a square matrix, with sgn(0) = +1.
inline SignMatrix sign_align(const Matrix& A) {
    if (A.rows() != A.cols()) throw invalid_argument_error("sign_align: matrix must be square");
    SignMatrix s;
    s.d = Vector(A.rows());
    for (Eigen::Index j = 0; j < A.rows(); ++j) s.d(j) = (A(j, j) >= 0.0) ? 1.0 : -1.0;
    return s;
}

/// S_t = R F_t C^T for each t.
inline MatrixSeries common_components(const FactorFit& fit) {
    fit.check_consistent();
    if (fit.T() == 0) throw invalid_argument_error("common_components: empty factor sequence");
    std::vector<Matrix> S;
    S.reserve(fit.F.size());
    for (const Matrix& f : fit.F) S.push_back(fit.R * f * fit.C.transpose());
    MatrixSeries out;
    out.data = std::move(S);
    return out;
}

} // namespace mfm
