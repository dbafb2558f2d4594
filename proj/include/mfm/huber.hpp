#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mfm/errors.hpp"
#include "mfm/types.hpp"

namespace mfm {

/// H_tau(x) = x^2/2 for |x| <= tau, tau*|x| - tau^2/2 otherwise.
inline double huber_loss(double x, double tau) {
    if (!(tau > 0.0)) throw invalid_argument_error("huber_loss: tau must be positive");
    if (!std::isfinite(x)) throw invalid_argument_error("huber_loss: non-finite input");
    const double a = std::abs(x);
    return a <= tau ? 0.5 * x * x : tau * a - 0.5 * tau * tau;
}

/// Derivative of H_tau: x inside the quadratic zone, tau*sgn(x) outside.
inline double huber_grad(double x, double tau) {
    if (!(tau > 0.0)) throw invalid_argument_error("huber_grad: tau must be positive");
    if (!std::isfinite(x)) throw invalid_argument_error("huber_grad: non-finite input");
    if (std::abs(x) <= tau) return x;
    return x > 0.0 ? tau : -tau;
}

/// (1/(T p1 p2)) sum_{t,i,j} H_tau(x_{t,ij} - r_i^T F_t c_j).
inline double evaluate_objective(const MatrixSeries& series, const FactorFit& fit, double tau) {
    if (!(tau > 0.0)) throw invalid_argument_error("evaluate_objective: tau must be positive");
    fit.check_consistent();
    if (fit.T() != series.T() || fit.p1() != series.p1() || fit.p2() != series.p2())
        throw invalid_argument_error("evaluate_objective: series/fit dimension mismatch");
    double acc = 0.0;
    for (Eigen::Index t = 0; t < series.T(); ++t) {
        const Matrix resid = series[t] - fit.R * fit.F[static_cast<std::size_t>(t)] * fit.C.transpose();
        if (!resid.allFinite()) throw invalid_data_error("evaluate_objective: non-finite residual");
        for (Eigen::Index i = 0; i < resid.rows(); ++i)
            for (Eigen::Index j = 0; j < resid.cols(); ++j) acc += huber_loss(resid(i, j), tau);
    }
    return acc / static_cast<double>(series.T() * series.p1() * series.p2());
}

/// How the robustification scale is chosen inside IRLS.
struct TauPolicy {
    enum class Kind { Fixed, Adaptive };
    Kind kind = Kind::Adaptive;
    double tau = 0.0; // only meaningful for Fixed

    static TauPolicy fixed(double tau) {
        if (!(tau > 0.0)) throw invalid_argument_error("TauPolicy::fixed: tau must be positive");
        return TauPolicy{Kind::Fixed, tau};
    }
    static TauPolicy adaptive() { return TauPolicy{Kind::Adaptive, 0.0}; }
};

struct HuberConfig {
    TauPolicy tau_policy = TauPolicy::adaptive();
    double c1 = 1.345;
    int max_irls_iters = 50;
    double irls_tol = 1e-8; // relative coefficient change
    std::uint64_t seed = 0;

    void validate() const {
        if (!(c1 > 0.0)) throw invalid_argument_error("HuberConfig: c1 must be positive");
        if (max_irls_iters < 1) throw invalid_argument_error("HuberConfig: max_irls_iters >= 1");
        if (!(irls_tol > 0.0)) throw invalid_argument_error("HuberConfig: irls_tol must be positive");
    }
};

struct IrlsResult {
    Vector beta;
    int iterations = 0;
    bool converged = false;
    bool ridge_used = false;
};

namespace detail {

/// Midpoint-of-central-order-statistics median; input is consumed.
inline double median_inplace(std::vector<double>& v) {
    const std::size_t n = v.size();
    const std::size_t mid = n / 2;
    std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
    double hi = v[mid];
    if (n % 2 == 1) return hi;
    double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
    return 0.5 * (lo + hi);
}

} // namespace detail

/// One Huber regression of y on Z, solved by iteratively reweighted least squares.
///
/// Adaptive policy: weights omega_i = min(1, c1 / (|eps_i| * c2)) with
/// c2 = 0.6745 / median(|eps_i|), both recomputed each sweep from the current
/// residuals (starting from the residuals at beta0). A zero residual median
/// degenerates to an unweighted least-squares step.
/// Fixed policy: omega_i = min(1, tau / |eps_i|).
inline IrlsResult irls_regress(const Vector& y, const Matrix& Z, const Vector& beta0,
                               const HuberConfig& cfg) {
    cfg.validate();
    const Eigen::Index n = y.size(), d = Z.cols();
    if (Z.rows() != n) throw invalid_argument_error("irls_regress: y/Z row mismatch");
    if (n < d) throw invalid_argument_error("irls_regress: need n >= d");
    if (beta0.size() != d) throw invalid_argument_error("irls_regress: beta0 size mismatch");
    if (!beta0.allFinite() || !y.allFinite() || !Z.allFinite())
        throw invalid_data_error("irls_regress: non-finite input");

    IrlsResult res;
    res.beta = beta0;
    Vector w(n), eps(n);
    std::vector<double> abs_eps(static_cast<std::size_t>(n));
    Matrix A(d, d);
    Vector b(d);

    for (int s = 0; s < cfg.max_irls_iters; ++s) {
        eps = y - Z * res.beta;
        if (cfg.tau_policy.kind == TauPolicy::Kind::Fixed) {
            const double tau = cfg.tau_policy.tau;
            for (Eigen::Index i = 0; i < n; ++i) {
                const double a = std::abs(eps(i));
                w(i) = (a <= tau || a == 0.0) ? 1.0 : tau / a;
            }
        } else {
            for (Eigen::Index i = 0; i < n; ++i) abs_eps[static_cast<std::size_t>(i)] = std::abs(eps(i));
            const double med = detail::median_inplace(abs_eps);
            if (med == 0.0) {
                w.setOnes(); // c2 = +inf: plain least-squares step
            } else {
                const double thresh = cfg.c1 * med / 0.6745; // c1 / c2
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double a = std::abs(eps(i));
                    w(i) = (a <= thresh || a == 0.0) ? 1.0 : thresh / a;
                }
            }
        }

        A.noalias() = Z.transpose() * w.asDiagonal() * Z;
        b.noalias() = Z.transpose() * w.cwiseProduct(y).matrix();

        Eigen::LDLT<Matrix> ldlt(A);
        bool degenerate = ldlt.info() != Eigen::Success;
        if (!degenerate) {
            const Vector D = ldlt.vectorD();
            const double dmax = D.cwiseAbs().maxCoeff();
            degenerate = dmax <= 0.0 || D.minCoeff() <= 1e-12 * dmax;
        }
        if (degenerate) {
            const double jitter = 1e-10 * (A.trace() / static_cast<double>(d) + 1.0);
            A.diagonal().array() += jitter;
            ldlt.compute(A);
            res.ridge_used = true;
        }
        Vector next = ldlt.solve(b);
        if (!next.allFinite()) throw numerical_error("irls_regress: non-finite IRLS iterate");

        res.iterations = s + 1;
        const double change = (next - res.beta).norm();
        const double scale = std::max(1.0, res.beta.norm());
        res.beta = next;
        if (change <= cfg.irls_tol * scale) {
            res.converged = true;
            break;
        }
    }
    return res;
}

} // namespace mfm
