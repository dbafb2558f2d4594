#pragma once

#include <Eigen/Dense>

#include "mfm/ihr.hpp"
#include "mfm/normalize.hpp"
#include "mfm/types.hpp"

namespace mfm {

enum class BaselineKind { alpha_pca_zero, least_squares_alt };

/// Spectral estimator: loadings from the leading eigenvectors of the pooled
/// second-moment matrices (the alpha-PCA comparison baseline at alpha = 0),
/// factors by projection, then the standard normalization.
inline FactorFit alpha_pca_fit(const MatrixSeries& series, Eigen::Index k1, Eigen::Index k2) {
    series.validate();
    if (k1 < 1 || k2 < 1 || k1 > series.p1() || k2 > series.p2())
        throw invalid_argument_error("alpha_pca_fit: factor numbers out of bounds");
    Matrix R, C;
    detail::alpha_pca_loadings(series, k1, k2, R, C);
    const double scale = 1.0 / static_cast<double>(series.p1() * series.p2());
    std::vector<Matrix> F;
    F.reserve(static_cast<std::size_t>(series.T()));
    for (Eigen::Index t = 0; t < series.T(); ++t)
        F.push_back(scale * R.transpose() * series[t] * C);

    NormalizedFit norm = normalize_fit(R, C, F, /*strict=*/false);
    FactorFit fit;
    fit.R = std::move(norm.R);
    fit.C = std::move(norm.C);
    fit.F = std::move(norm.F);
    detail::fix_column_signs(fit.R, fit.C, fit.F);
    fit.normalized = true;
    fit.converged = true;
    fit.iterations = 1;
    fit.diagnostics.tau_used = 0.0;
    fit.objective_value = 0.0;
    double sq = 0.0;
    for (Eigen::Index t = 0; t < series.T(); ++t)
        sq += (series[t] - fit.R * fit.F[static_cast<std::size_t>(t)] * fit.C.transpose()).squaredNorm();
    fit.objective_value = 0.5 * sq / static_cast<double>(series.T() * series.p1() * series.p2());
    return fit;
}

/// Least-squares alternating fit: the IHR scheme with tau fixed at 1e12, so
/// every IRLS weight is 1.
inline FactorFit ls_alternating_fit(const MatrixSeries& series, Eigen::Index k1, Eigen::Index k2,
                                    IhrOptions opts = IhrOptions{}) {
    opts.k1 = k1;
    opts.k2 = k2;
    opts.huber.tau_policy = TauPolicy::fixed(1e12);
    return ihr_fit(series, opts);
}

} // namespace mfm
