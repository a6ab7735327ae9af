#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>

#include "cosy/error.hpp"
#include "cosy/metrics.hpp"

using namespace cosy;

namespace {

// Samples whose empirical mean and covariance are exactly mu and sigma:
// whiten a random draw, then color it.
Eigen::MatrixXd exact_moments(std::mt19937_64& rng, int n, const Eigen::VectorXd& mu, const Eigen::MatrixXd& sigma) {
    std::normal_distribution<double> g;
    const auto d = mu.size();
    Eigen::MatrixXd x(n, d);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x(i, j) = g(rng);
    const Eigen::RowVectorXd m = x.colwise().mean();
    x.rowwise() -= m;
    const Eigen::MatrixXd c = x.transpose() * x / double(n - 1);
    const Eigen::MatrixXd white = Eigen::LLT<Eigen::MatrixXd>(c).matrixL().solve(Eigen::MatrixXd::Identity(d, d));
    const Eigen::MatrixXd color = Eigen::LLT<Eigen::MatrixXd>(sigma).matrixL();
    Eigen::MatrixXd y = x * white.transpose() * color.transpose();
    y.rowwise() += mu.transpose();
    return y;
}

}  // namespace

TEST_CASE("frechet distance: closed-form oracles") {
    std::mt19937_64 rng(1);
    SUBCASE("1-d unit shift") {
        const auto a = exact_moments(rng, 500, Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Identity(1, 1));
        const auto b = exact_moments(rng, 700, Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Identity(1, 1));
        CHECK(std::abs(frechet_distance(a, b) - 1.0) < 1e-6);
    }
    SUBCASE("isotropic variance 1 vs 4") {
        const int d = 16;
        const auto a = exact_moments(rng, 400, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d));
        const auto b = exact_moments(rng, 400, Eigen::VectorXd::Zero(d), 4.0 * Eigen::MatrixXd::Identity(d, d));
        // d * (sqrt(4) - sqrt(1))^2
        CHECK(std::abs(frechet_distance(a, b) - d) < 1e-6);
    }
    SUBCASE("commuting diagonal covariances") {
        Eigen::VectorXd s1(3), s2(3), m1(3), m2(3);
        s1 << 1.0, 2.0, 0.5;
        s2 << 3.0, 0.25, 0.5;
        m1 << 0.1, -0.2, 0.3;
        m2 << -0.4, 0.0, 0.3;
        double expect = (m1 - m2).squaredNorm();
        for (int i = 0; i < 3; ++i) expect += std::pow(std::sqrt(s1[i]) - std::sqrt(s2[i]), 2);
        CHECK(std::abs(frechet_distance(m1, Eigen::MatrixXd(s1.asDiagonal()), m2, Eigen::MatrixXd(s2.asDiagonal())) -
                       expect) < 1e-12);
    }
}

TEST_CASE("frechet distance: identity, symmetry, rank deficiency, non-finite") {
    std::mt19937_64 rng(2);
    std::normal_distribution<double> g;
    Eigen::MatrixXd a(300, 8), b(250, 8);
    for (int i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
    for (int i = 0; i < b.size(); ++i) b.data()[i] = 0.5 * g(rng) + 0.2;
    CHECK(frechet_distance(a, a) < 1e-6);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) < 1e-8);

    // Rank-deficient covariance (duplicated column) must not produce NaN.
    Eigen::MatrixXd c = a;
    c.col(7) = c.col(6);
    CHECK(std::isfinite(frechet_distance(c, b)));

    a(3, 2) = std::nan("");
    CHECK_THROWS_AS(frechet_distance(a, b), Error);
    try {
        frechet_distance(a, b);
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::NonFiniteFeatures);
    }
}

TEST_CASE("pca recovers a rank-2 mapping") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g;
    const int d = 64, n = 5000;
    Eigen::MatrixXd A(d, 2);
    for (int i = 0; i < A.size(); ++i) A.data()[i] = g(rng);
    A.col(1) *= 0.4;
    Eigen::MatrixXd w(n, d);
    for (int i = 0; i < n; ++i) {
        Eigen::Vector2d z(g(rng), g(rng));
        w.row(i) = (A * z).transpose();
    }
    const auto res = pca(w, 4);

    // Oracle: eigenvectors of A A^T span col(A).
    const double angle = max_principal_angle(res.directions.topRows(2), A.transpose());
    CHECK(angle * 180.0 / std::numbers::pi < 1.0);

    const Eigen::MatrixXd gram = res.directions * res.directions.transpose();
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < 4; ++j) CHECK(std::abs(gram(i, j) - (i == j ? 1.0 : 0.0)) < 1e-6);
    for (int i = 1; i < 4; ++i) CHECK(res.variances[i] <= res.variances[i - 1]);
    CHECK(res.variances[2] < 1e-8);
}

TEST_CASE("principal angle of known subspaces") {
    Eigen::MatrixXd a(1, 3), b(1, 3);
    a << 1, 0, 0;
    b << std::cos(0.3), std::sin(0.3), 0;
    CHECK(max_principal_angle(a, b) == doctest::Approx(0.3).epsilon(1e-9));
}
