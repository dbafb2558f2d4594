#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfm/baselines.hpp"
#include "mfm/inference.hpp"
#include "mfm/simulate.hpp"
#include "test_helpers.hpp"

using namespace mfm;

namespace {

FactorFit truth_fit(const testutil::NoiselessData& data) {
    FactorFit fit;
    fit.R = data.R0;
    fit.C = data.C0;
    fit.F = data.F0;
    fit.normalized = true;
    return fit;
}

} // namespace

TEST_CASE("normal quantile fixtures") {
    CHECK(normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normal_quantile(0.975) == doctest::Approx(1.959963985).epsilon(1e-7));
    CHECK(normal_quantile(0.05) == doctest::Approx(-1.644853627).epsilon(1e-7));
    CHECK(normal_quantile(1e-10) == doctest::Approx(-6.361340902).epsilon(1e-6));
    CHECK_THROWS_AS(normal_quantile(0.0), invalid_argument_error);
    CHECK_THROWS_AS(normal_quantile(1.0), invalid_argument_error);
    // quantile inverts the cdf
    for (double p = 0.01; p < 1.0; p += 0.07)
        CHECK(normal_cdf(normal_quantile(p)) == doctest::Approx(p).epsilon(1e-8));
}

TEST_CASE("select_tau fixtures") {
    // all residuals of magnitude 1 -> s_hat = 1.483, tau = 1.345 * 1.483
    const auto data = testutil::noiseless_data(1, 2, 3, 3, 1, 1);
    MatrixSeries shifted = data.X;
    for (Eigen::Index t = 0; t < 2; ++t)
        for (Eigen::Index i = 0; i < 3; ++i)
            for (Eigen::Index j = 0; j < 3; ++j)
                shifted[t](i, j) += ((i + j + t) % 2 == 0) ? 1.0 : -1.0;
    const TauSelection sel = select_tau(shifted, truth_fit(data));
    CHECK(sel.s_hat == doctest::Approx(1.483).epsilon(1e-12));
    CHECK(sel.tau == doctest::Approx(1.9946335).epsilon(1e-6));
    CHECK_FALSE(sel.degenerate);

    // zero-noise series: degenerate floor
    const TauSelection zero = select_tau(data.X, truth_fit(data));
    CHECK(zero.degenerate);
    CHECK(zero.tau == 1e-6);
}

TEST_CASE("select_tau on standard-normal residuals approaches 1.345") {
    const auto data = testutil::noiseless_data(2, 40, 30, 30, 1, 1);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(99);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cols(); ++j) m(i, j) += rng.normal();
    const TauSelection sel = select_tau(noisy, truth_fit(data));
    // median |N(0,1)| ~ 0.6745, so s_hat ~ 1.0003 and tau ~ 1.345
    CHECK(sel.tau == doctest::Approx(1.345).epsilon(0.03));
}

TEST_CASE("row covariance: all residuals inside tau reduces to LS form") {
    const auto data = testutil::noiseless_data(7, 4, 5, 5, 2, 2);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(7);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < 5; ++i)
            for (Eigen::Index j = 0; j < 5; ++j) m(i, j) += 0.01 * rng.normal();
    const FactorFit fit = truth_fit(data);
    const double tau = 100.0; // everything inside
    Matrix Phi, Sigma;
    row_covariance(noisy, fit, 1, tau, Phi, Sigma);

    Matrix Phi_ls = Matrix::Zero(2, 2), Sigma_ls = Matrix::Zero(2, 2);
    for (Eigen::Index t = 0; t < 4; ++t)
        for (Eigen::Index j = 0; j < 5; ++j) {
            const Vector z = fit.F[static_cast<std::size_t>(t)] * fit.C.row(j).transpose();
            const double e = noisy[t](1, j) - (fit.R.row(1) * z)(0);
            Phi_ls += z * z.transpose();
            Sigma_ls += e * e * z * z.transpose();
        }
    Phi_ls /= 20.0;
    Sigma_ls /= 20.0;
    CHECK((Phi - Phi_ls).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((Sigma - Sigma_ls).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("row covariance: all residuals outside tau is the singular error path") {
    const auto data = testutil::noiseless_data(11, 3, 4, 4, 1, 1);
    MatrixSeries noisy = data.X;
    for (auto& m : noisy.data) m.array() += 100.0; // push every residual far out
    Matrix Phi, Sigma;
    CHECK_THROWS_AS(row_covariance(noisy, truth_fit(data), 0, 1e-3, Phi, Sigma), numerical_error);
}

TEST_CASE("min(e^2, tau^2) equals the squared clipped gradient") {
    for (double e = -5.0; e < 5.0; e += 0.31)
        for (const double tau : {0.5, 1.0, 2.0}) {
            const double g = huber_grad(e, tau);
            CHECK(std::min(e * e, tau * tau) == doctest::Approx(g * g).epsilon(1e-12));
        }
}

TEST_CASE("k1=1 hand-enumerable covariance sums") {
    // T=2, p2=2, k1=1: four terms, computed by hand below.
    FactorFit fit;
    fit.R = Matrix::Constant(2, 1, 1.0);
    Matrix C(2, 1);
    C << 1.0, 2.0;
    fit.C = C;
    fit.F = {Matrix::Constant(1, 1, 1.0), Matrix::Constant(1, 1, 0.5)};
    MatrixSeries s;
    Matrix X1(2, 2), X2(2, 2);
    X1 << 1.1, 2.3, 0.0, 0.0; // row 0 is what matters
    X2 << 0.4, 1.6, 0.0, 0.0;
    s.data = {X1, X2};
    const double tau = 0.25;
    // designs z: t=1: (1, 2); t=2: (0.5, 1). residuals row 0: 0.1, 0.3, -0.1, 0.6
    // indicator keeps |e|<=0.25: e=0.1 (z=1) and e=-0.1 (z=0.5)
    const double Phi_hand = (1.0 * 1.0 + 0.5 * 0.5) / 4.0;
    const double Sigma_hand = (0.01 * 1.0 + 0.0625 * 4.0 + 0.01 * 0.25 + 0.0625 * 1.0) / 4.0;
    Matrix Phi, Sigma;
    row_covariance(s, fit, 0, tau, Phi, Sigma);
    CHECK(Phi(0, 0) == doctest::Approx(Phi_hand).epsilon(1e-12));
    CHECK(Sigma(0, 0) == doctest::Approx(Sigma_hand).epsilon(1e-12));
}

TEST_CASE("column covariance mirrors row covariance under transposition") {
    const auto data = testutil::noiseless_data(13, 4, 5, 6, 2, 2);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(14);
    for (auto& m : noisy.data) m.array() += 0.05; // deterministic small shift
    const FactorFit fit = truth_fit(data);

    Matrix Psi, SigC;
    col_covariance(noisy, fit, 2, 1.0, Psi, SigC);

    MatrixSeries st;
    for (const Matrix& m : noisy.data) st.data.push_back(m.transpose());
    FactorFit tfit;
    tfit.R = fit.C;
    tfit.C = fit.R;
    for (const Matrix& f : fit.F) tfit.F.push_back(f.transpose());
    Matrix Phi, SigR;
    row_covariance(st, tfit, 2, 1.0, Phi, SigR);
    CHECK((Psi - Phi).cwiseAbs().maxCoeff() <= 1e-12);
    CHECK((SigC - SigR).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("standardized stat is zero when the fit equals the aligned truth") {
    const auto data = testutil::noiseless_data(17, 6, 8, 8, 2, 2);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(18);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < 8; ++i)
            for (Eigen::Index j = 0; j < 8; ++j) m(i, j) += 0.05 * rng.normal();
    const FactorFit fit = truth_fit(data);
    Matrix Phi, Sigma;
    row_covariance(noisy, fit, 3, 1.0, Phi, Sigma);
    const Vector stat = standardized_row_stat(fit, data.R0, 3, Phi, Sigma, 6, 8);
    CHECK(stat.cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("scalar standardized stat reduction") {
    const auto data = testutil::noiseless_data(19, 5, 6, 6, 1, 1);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(20);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < 6; ++i)
            for (Eigen::Index j = 0; j < 6; ++j) m(i, j) += 0.2 * rng.normal();
    IhrOptions opts;
    opts.init = IhrInit::alpha_pca();
    opts.huber.tau_policy = TauPolicy::fixed(1.0);
    const FactorFit fit = ihr_fit(noisy, opts);
    Matrix Phi, Sigma;
    row_covariance(noisy, fit, 2, 1.0, Phi, Sigma);
    const Vector stat = standardized_row_stat(fit, data.R0, 2, Phi, Sigma, 5, 6);
    const SignMatrix H = sign_align(data.R0.transpose() * fit.R / 6.0);
    const double expected = std::sqrt(30.0) * Phi(0, 0) *
                            (fit.R(2, 0) - H.d(0) * data.R0(2, 0)) / std::sqrt(Sigma(0, 0));
    CHECK(stat(0) == doctest::Approx(expected).epsilon(1e-10));
}

TEST_CASE("confidence intervals: symmetry, level validation, tau -> infinity LS limit") {
    const auto data = testutil::noiseless_data(23, 6, 7, 7, 2, 2);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(24);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < 7; ++i)
            for (Eigen::Index j = 0; j < 7; ++j) m(i, j) += 0.1 * rng.normal();
    const FactorFit fit = truth_fit(data);

    CHECK_THROWS_AS(loading_confidence_interval(noisy, fit, 0, true, 1.0, 0.0),
                    invalid_argument_error);
    CHECK_THROWS_AS(loading_confidence_interval(noisy, fit, 0, true, 1.0, 1.0),
                    invalid_argument_error);

    const auto iv = loading_confidence_interval(noisy, fit, 1, true, 1.0, 0.05);
    REQUIRE(iv.size() == 2u);
    for (const auto& one : iv) {
        CHECK(one.center == doctest::Approx(0.5 * (one.lower + one.upper)).epsilon(1e-12));
        CHECK(one.center == doctest::Approx(fit.R(1, &one - iv.data())).epsilon(1e-12));
    }

    // enormous tau: sandwich equals the plain LS sandwich with e^2 weights
    const auto iv_inf = loading_confidence_interval(noisy, fit, 1, true, 1e9, 0.05);
    Matrix Phi, Sigma;
    row_covariance(noisy, fit, 1, 1e9, Phi, Sigma);
    const Matrix inv = Phi.inverse();
    const Matrix cov = inv * Sigma * inv / (6.0 * 7.0);
    const double z = normal_quantile(0.975);
    for (std::size_t c = 0; c < 2; ++c) {
        const double half = z * std::sqrt(cov(static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(c)));
        CHECK(iv_inf[c].upper - iv_inf[c].center == doctest::Approx(half).epsilon(1e-10));
    }
}

TEST_CASE("full inference report shapes and aspect diagnostic") {
    const auto data = testutil::noiseless_data(27, 6, 5, 4, 2, 2);
    MatrixSeries noisy = data.X;
    mfm::Rng rng(28);
    for (auto& m : noisy.data)
        for (Eigen::Index i = 0; i < 5; ++i)
            for (Eigen::Index j = 0; j < 4; ++j) m(i, j) += 0.1 * rng.normal();
    const InferenceReport rep = build_inference_report(noisy, truth_fit(data), 1.0, 0.05);
    CHECK(rep.rows.size() == 5u);
    CHECK(rep.cols.size() == 4u);
    CHECK(rep.row_aspect == doctest::Approx(std::max(5.0 / 24.0, 24.0 / 5.0)));
    CHECK(row_aspect_ratio(10, 100, 10) == doctest::Approx(1.0));
}
