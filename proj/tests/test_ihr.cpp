#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfm/ihr.hpp"
#include "mfm/metrics.hpp"
#include "mfm/simulate.hpp"
#include "test_helpers.hpp"

using namespace mfm;

TEST_CASE("init_factor_matrices: exact projection under identification") {
    const auto data = testutil::noiseless_data(3, 5, 8, 7, 2, 2);
    const std::vector<Matrix> F = init_factor_matrices(data.X, data.R0, data.C0);
    for (std::size_t t = 0; t < F.size(); ++t)
        CHECK((F[t] - data.F0[t]).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("init_factor_matrices: zero data gives zero factors") {
    const auto data = testutil::noiseless_data(4, 2, 6, 6, 2, 2);
    MatrixSeries zeros;
    for (int t = 0; t < 2; ++t) zeros.data.push_back(Matrix::Zero(6, 6));
    const std::vector<Matrix> F = init_factor_matrices(zeros, data.R0, data.C0);
    for (const Matrix& f : F) CHECK(f.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("init_factor_matrices matches nested-sum oracle and validates input") {
    const auto data = testutil::noiseless_data(6, 4, 3, 3, 2, 2);
    const std::vector<Matrix> F = init_factor_matrices(data.X, data.R0, data.C0);
    const double scale = 1.0 / 9.0;
    for (Eigen::Index t = 0; t < 4; ++t)
        for (Eigen::Index a = 0; a < 2; ++a)
            for (Eigen::Index b = 0; b < 2; ++b) {
                double acc = 0.0;
                for (Eigen::Index i = 0; i < 3; ++i)
                    for (Eigen::Index j = 0; j < 3; ++j)
                        acc += data.R0(i, a) * data.X[t](i, j) * data.C0(j, b);
                CHECK(F[static_cast<std::size_t>(t)](a, b) ==
                      doctest::Approx(scale * acc).epsilon(1e-12));
            }
    // non-normalized loadings rejected
    mfm::Rng rng(2);
    CHECK_THROWS_AS(init_factor_matrices(data.X, testutil::random_matrix(rng, 3, 2), data.C0),
                    invalid_argument_error);
}

TEST_CASE("update_rows recovers truth on noiseless data") {
    const auto data = testutil::noiseless_data(7, 6, 5, 5, 2, 2);
    HuberConfig cfg;
    cfg.max_irls_iters = 100;
    const Matrix R = update_rows(data.X, data.F0, data.C0, cfg);
    CHECK((R - data.R0).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("update_rows scalar one-point fit") {
    // k1 = 1, T = p2 = 1: r_i = x_{1,i1} / (F_1 c_1)
    MatrixSeries s;
    Matrix X(2, 1);
    X << 6.0, -3.0;
    s.data.push_back(X);
    const std::vector<Matrix> F = {Matrix::Constant(1, 1, 2.0)};
    const Matrix C = Matrix::Constant(1, 1, 1.5);
    HuberConfig cfg;
    cfg.max_irls_iters = 200;
    cfg.irls_tol = 1e-14;
    const Matrix R = update_rows(s, F, C, cfg);
    CHECK(R(0, 0) == doctest::Approx(6.0 / 3.0).epsilon(1e-8));
    CHECK(R(1, 0) == doctest::Approx(-3.0 / 3.0).epsilon(1e-8));
}

TEST_CASE("update_rows outlier instance matches grid-search oracle") {
    // one row, T=3, p2=2, k1=k2=1, fixed tau=1, one gross outlier
    MatrixSeries s;
    const double f[3] = {1.0, -0.5, 0.8};
    const double c[2] = {1.0, 2.0};
    const double r_true = 1.5;
    for (int t = 0; t < 3; ++t) {
        Matrix X(1, 2);
        for (int j = 0; j < 2; ++j) X(0, j) = r_true * f[t] * c[j];
        s.data.push_back(X);
    }
    s[0](0, 1) += 50.0;
    std::vector<Matrix> F;
    for (int t = 0; t < 3; ++t) F.push_back(Matrix::Constant(1, 1, f[t]));
    Matrix C(2, 1);
    C << c[0], c[1];
    HuberConfig cfg;
    cfg.tau_policy = TauPolicy::fixed(1.0);
    cfg.max_irls_iters = 1000;
    cfg.irls_tol = 1e-14;
    const Matrix R = update_rows(s, F, C, cfg);
    const double oracle = testutil::golden_min(
        [&](double r) {
            double acc = 0.0;
            for (int t = 0; t < 3; ++t)
                for (int j = 0; j < 2; ++j) acc += huber_loss(s[t](0, j) - r * f[t] * c[j], 1.0);
            return acc;
        },
        -10.0, 10.0);
    CHECK(R(0, 0) == doctest::Approx(oracle).epsilon(1e-4));
}

TEST_CASE("update_cols is the transpose of update_rows") {
    const MatrixSeries s = testutil::random_series(33, 4, 5, 6);
    mfm::Rng rng(34);
    const Matrix R = testutil::random_matrix(rng, 5, 2);
    std::vector<Matrix> F;
    for (int t = 0; t < 4; ++t) F.push_back(testutil::random_matrix(rng, 2, 2));
    HuberConfig cfg;
    cfg.max_irls_iters = 100;

    const Matrix C = update_cols(s, R, F, cfg);

    MatrixSeries st;
    for (const Matrix& x : s.data) st.data.push_back(x.transpose());
    std::vector<Matrix> Ft;
    for (const Matrix& f : F) Ft.push_back(f.transpose());
    const Matrix C2 = update_rows(st, Ft, R, cfg);
    CHECK((C - C2).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("update_factors noiseless recovery and closed-form LS ratio") {
    const auto data = testutil::noiseless_data(44, 5, 6, 6, 2, 2);
    HuberConfig cfg;
    cfg.max_irls_iters = 100;
    const std::vector<Matrix> F = update_factors(data.X, data.R0, data.C0, cfg);
    for (std::size_t t = 0; t < F.size(); ++t)
        CHECK((F[t] - data.F0[t]).cwiseAbs().maxCoeff() <= 1e-8);

    // k1=k2=1, tau effectively infinite: f_t = sum_ij x r_i c_j / (sum r^2 sum c^2)
    const MatrixSeries s = testutil::random_series(45, 3, 4, 4);
    mfm::Rng rng(46);
    const Matrix r = testutil::random_matrix(rng, 4, 1);
    const Matrix c = testutil::random_matrix(rng, 4, 1);
    HuberConfig ls;
    ls.tau_policy = TauPolicy::fixed(1e12);
    ls.max_irls_iters = 100;
    const std::vector<Matrix> f = update_factors(s, r, c, ls);
    for (Eigen::Index t = 0; t < 3; ++t) {
        double num = 0.0;
        for (Eigen::Index i = 0; i < 4; ++i)
            for (Eigen::Index j = 0; j < 4; ++j) num += s[t](i, j) * r(i, 0) * c(j, 0);
        const double den = r.squaredNorm() * c.squaredNorm();
        CHECK(f[static_cast<std::size_t>(t)](0, 0) ==
              doctest::Approx(num / den).epsilon(1e-9));
    }
}

TEST_CASE("Kronecker design identity") {
    mfm::Rng rng(55);
    const Eigen::Index p1 = 3, p2 = 4, k1 = 2, k2 = 2;
    const Matrix R = testutil::random_matrix(rng, p1, k1);
    const Matrix C = testutil::random_matrix(rng, p2, k2);
    const Matrix F = testutil::random_matrix(rng, k1, k2);
    const Vector vecF = Eigen::Map<const Vector>(F.data(), k1 * k2); // column-major
    for (Eigen::Index i = 0; i < p1; ++i)
        for (Eigen::Index j = 0; j < p2; ++j) {
            Vector z(k1 * k2);
            for (Eigen::Index b = 0; b < k2; ++b)
                for (Eigen::Index a = 0; a < k1; ++a) z(b * k1 + a) = C(j, b) * R(i, a);
            const double lhs = z.dot(vecF);
            const double rhs = (R.row(i) * F * C.row(j).transpose())(0);
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
        }
}

TEST_CASE("noiseless warm start at truth converges immediately to the truth") {
    const auto data = testutil::noiseless_data(66, 6, 8, 7, 2, 2);
    IhrOptions opts;
    opts.k1 = 2;
    opts.k2 = 2;
    opts.init = IhrInit::warm(data.R0, data.C0);
    const FactorFit fit = ihr_fit(data.X, opts);
    CHECK(fit.converged);
    CHECK(fit.iterations == 1);
    CHECK(space_distance(fit.R, data.R0) <= 1e-8);
    CHECK(space_distance(fit.C, data.C0) <= 1e-8);
    CHECK(fit.objective_value <= 1e-12);
}

TEST_CASE("ihr output satisfies the identification invariants") {
    const DgpParams params; // T=p1=p2=20, k=3
    DgpParams p = params;
    p.seed = 7;
    const SimulatedData data = generate(p);
    IhrOptions opts;
    opts.k1 = 3;
    opts.k2 = 3;
    opts.init = IhrInit::alpha_pca();
    const FactorFit fit = ihr_fit(data.X, opts);
    CHECK(fit.normalized);
    const Matrix gr = fit.R.transpose() * fit.R / 20.0 - Matrix::Identity(3, 3);
    const Matrix gc = fit.C.transpose() * fit.C / 20.0 - Matrix::Identity(3, 3);
    CHECK(gr.cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(gc.cwiseAbs().maxCoeff() <= 1e-8);
    // column-sign convention
    for (Eigen::Index a = 0; a < 3; ++a) CHECK(fit.R.col(a).sum() >= 0.0);
    for (Eigen::Index b = 0; b < 3; ++b) CHECK(fit.C.col(b).sum() >= 0.0);
}

TEST_CASE("ihr is deterministic given a seed and schedule-independent") {
    DgpParams p;
    p.T = 10;
    p.p1 = 8;
    p.p2 = 8;
    p.seed = 19;
    const SimulatedData data = generate(p);
    IhrOptions opts;
    opts.k1 = 3;
    opts.k2 = 3;
    opts.init = IhrInit::random_normal(123);
    const FactorFit a = ihr_fit(data.X, opts);
    thread_cap().store(1);
    const FactorFit b = ihr_fit(data.X, opts);
    thread_cap().store(0);
    CHECK((a.R - b.R).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.C - b.C).cwiseAbs().maxCoeff() == 0.0);
    CHECK(a.objective_value == b.objective_value);
}

TEST_CASE("option validation") {
    IhrOptions opts;
    opts.k1 = 0;
    CHECK_THROWS_AS(opts.validate(5, 5), invalid_argument_error);
    opts.k1 = 6;
    opts.k2 = 1;
    CHECK_THROWS_AS(opts.validate(5, 5), invalid_argument_error);
    opts.k1 = 2;
    opts.max_sweeps = 0;
    CHECK_THROWS_AS(opts.validate(5, 5), invalid_argument_error);
}
