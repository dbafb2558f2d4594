#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfm/rng.hpp"
#include "mfm/simulate.hpp"
#include "test_helpers.hpp"

using namespace mfm;

TEST_CASE("rng determinism and seed derivation") {
    Rng a(42), b(42), c(43);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
    bool differs = false;
    for (int i = 0; i < 10; ++i) differs = differs || (a.next_u64() != c.next_u64());
    CHECK(differs);
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 0) != derive_seed(2, 0));
    CHECK(derive_seed(7, 5) == derive_seed(7, 5));
}

TEST_CASE("rng moments") {
    Rng rng(11);
    const int n = 200000;
    double mean = 0.0, var = 0.0;
    std::vector<double> xs(n);
    for (int i = 0; i < n; ++i) {
        xs[i] = rng.normal();
        mean += xs[i];
    }
    mean /= n;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n - 1;
    CHECK(mean == doctest::Approx(0.0).epsilon(0.02));
    CHECK(var == doctest::Approx(1.0).epsilon(0.03));

    double umin = 1.0, umax = 0.0, usum = 0.0;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform01();
        umin = std::min(umin, u);
        umax = std::max(umax, u);
        usum += u;
    }
    CHECK(usum / n == doctest::Approx(0.5).epsilon(0.01));
    CHECK(umin >= 0.0);
    CHECK(umax < 1.0);
}

TEST_CASE("generate is deterministic and validates parameters") {
    DgpParams p;
    p.T = 6;
    p.p1 = 5;
    p.p2 = 4;
    p.seed = 17;
    const SimulatedData a = generate(p);
    const SimulatedData b = generate(p);
    for (Eigen::Index t = 0; t < 6; ++t) CHECK((a.X[t] - b.X[t]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.R0 - b.R0).cwiseAbs().maxCoeff() == 0.0);

    p.phi = 1.0;
    CHECK_THROWS_AS(generate(p), invalid_argument_error);
    p.phi = 0.1;
    p.k1 = 0;
    CHECK_THROWS_AS(generate(p), invalid_argument_error);
}

TEST_CASE("loadings are uniform on (-1, 1)") {
    DgpParams p;
    p.p1 = 200;
    p.p2 = 200;
    p.seed = 23;
    const SimulatedData d = generate(p);
    CHECK(d.R0.minCoeff() >= -1.0);
    CHECK(d.R0.maxCoeff() <= 1.0);
    CHECK(std::abs(d.R0.mean()) <= 0.1);
    // variance of U(-1,1) is 1/3
    const double var = (d.R0.array() - d.R0.mean()).square().mean();
    CHECK(var == doctest::Approx(1.0 / 3.0).epsilon(0.1));
}

TEST_CASE("phi = psi = 0 gives white noise; phi = 0.1 gives matching autocorrelation") {
    DgpParams p;
    p.T = 4000;
    p.p1 = 2;
    p.p2 = 2;
    p.k1 = 1;
    p.k2 = 1;
    p.seed = 29;
    p.phi = 0.0;
    p.psi = 0.0;
    const SimulatedData d = generate(p);
    auto lag1 = [&](std::function<double(Eigen::Index)> x, Eigen::Index T) {
        double m = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) m += x(t);
        m /= static_cast<double>(T);
        double num = 0.0, den = 0.0;
        for (Eigen::Index t = 0; t < T; ++t) {
            den += (x(t) - m) * (x(t) - m);
            if (t > 0) num += (x(t) - m) * (x(t - 1) - m);
        }
        return num / den;
    };
    const double rho0 = lag1([&](Eigen::Index t) { return d.F0[static_cast<std::size_t>(t)](0, 0); }, 4000);
    CHECK(std::abs(rho0) <= 0.1);

    p.phi = 0.5;
    const SimulatedData d2 = generate(p);
    const double rho5 =
        lag1([&](Eigen::Index t) { return d2.F0[static_cast<std::size_t>(t)](0, 0); }, 4000);
    CHECK(rho5 == doctest::Approx(0.5).epsilon(0.1));

    // stationary variance of the factor process is 1
    double var = 0.0;
    for (const Matrix& f : d2.F0) var += f(0, 0) * f(0, 0);
    var /= 4000.0;
    CHECK(var == doctest::Approx(1.0).epsilon(0.15));
}

TEST_CASE("normal errors have unit variance; t3 errors are heavy tailed") {
    DgpParams p;
    p.T = 100;
    p.p1 = 40;
    p.p2 = 40;
    p.seed = 31;
    p.psi = 0.0;
    const SimulatedData d = generate(p);
    double var = 0.0, kurt = 0.0;
    std::vector<double> errs;
    for (Eigen::Index t = 0; t < p.T; ++t) {
        const Matrix E = d.X[t] - d.R0 * d.F0[static_cast<std::size_t>(t)] * d.C0.transpose();
        for (Eigen::Index i = 0; i < 40; ++i)
            for (Eigen::Index j = 0; j < 40; ++j) errs.push_back(E(i, j));
    }
    for (double e : errs) var += e * e;
    var /= static_cast<double>(errs.size());
    CHECK(var == doctest::Approx(1.0).epsilon(0.05));

    p.error_dist = ErrorDist::t3;
    const SimulatedData d3 = generate(p);
    errs.clear();
    for (Eigen::Index t = 0; t < p.T; ++t) {
        const Matrix E = d3.X[t] - d3.R0 * d3.F0[static_cast<std::size_t>(t)] * d3.C0.transpose();
        for (Eigen::Index i = 0; i < 40; ++i)
            for (Eigen::Index j = 0; j < 40; ++j) errs.push_back(E(i, j));
    }
    double m2 = 0.0, m4 = 0.0;
    for (double e : errs) {
        m2 += e * e;
        m4 += e * e * e * e;
    }
    m2 /= static_cast<double>(errs.size());
    m4 /= static_cast<double>(errs.size());
    kurt = m4 / (m2 * m2);
    CHECK(kurt > 5.0); // far above the Gaussian 3
}

TEST_CASE("setting_params mirrors A and B") {
    const DgpParams a = setting_params(SimSetting::A, 50, ErrorDist::t3, 1);
    CHECK(a.p1 == 20);
    CHECK(a.T == 50);
    CHECK(a.p2 == 50);
    const DgpParams b = setting_params(SimSetting::B, 50, ErrorDist::t3, 1);
    CHECK(b.p2 == 20);
    CHECK(b.p1 == 50);
}

TEST_CASE("normality study edge case: single rep reports KS as absent") {
    DgpParams p;
    p.T = 10;
    p.p1 = 20;
    p.p2 = 10;
    const NormalityStudyResult res = run_normality_study(p, 1, true, 5);
    CHECK(res.samples.size() + static_cast<std::size_t>(res.dropped) == 1u);
    CHECK(res.ks_distance == -1.0);
}

TEST_CASE("estimation error cell runs and is deterministic") {
    DgpParams base;
    base.T = 10;
    base.p1 = 10;
    base.p2 = 10;
    base.k1 = 2;
    base.k2 = 2;
    const EstimatorErrorSummary a = estimation_error_cell(base, FitMethod::alpha_pca, 4, 99);
    const EstimatorErrorSummary b = estimation_error_cell(base, FitMethod::alpha_pca, 4, 99);
    CHECK(a.mean_dR == b.mean_dR);
    CHECK(a.mean_dR > 0.0);
    CHECK(a.failures == 0);
}
