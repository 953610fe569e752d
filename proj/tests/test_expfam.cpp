#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "cdforest/expfam.hpp"
#include "oracles.hpp"

using namespace cdforest;
using Catch::Matchers::WithinAbs;
using oracle::mean_closed;
using oracle::random_theta;

namespace {

// J = 1: Z(theta) = sinh(a)/a with a = sqrt(3) theta.
double log_z_closed(double c) {
    const double a = c * std::sqrt(3.0);
    return std::log((std::exp(a) - std::exp(-a)) / (2.0 * a));
}

// y -> 1 - y flips the sign of odd-index components.
Eigen::VectorXd reflect(const Eigen::VectorXd& theta) {
    Eigen::VectorXd r = theta;
    for (Eigen::Index j = 0; j < r.size(); j += 2) r[j] = -r[j];  // index 0 is phi_1
    return r;
}

}  // namespace

TEST_CASE("log_partition", "[expfam]") {
    const BasisSpec j1(1);
    const BasisSpec j6(6);
    CHECK_THAT(log_partition(Eigen::VectorXd::Zero(6), j6), WithinAbs(0.0, 1e-15));
    CHECK_THAT(log_partition(Eigen::VectorXd::Constant(1, 0.5), j1), WithinAbs(log_z_closed(0.5), 1e-10));
    for (double c : {-3.0, -0.2, 1.0, 4.0}) {
        CHECK_THAT(log_partition(Eigen::VectorXd::Constant(1, c), j1), WithinAbs(log_z_closed(c), 1e-10));
    }
    Eigen::VectorXd odd = Eigen::VectorXd::Zero(6);
    odd << 0.7, 0.0, -1.1, 0.0, 0.4, 0.0;
    CHECK_THAT(log_partition(odd, j6), WithinAbs(log_partition(-odd, j6), 1e-12));
    CHECK_THROWS_AS(log_partition(Eigen::VectorXd::Zero(5), j6), ConfigError);
    Eigen::VectorXd bad = Eigen::VectorXd::Zero(6);
    bad[2] = std::nan("");
    CHECK_THROWS_AS(log_partition(bad, j6), NumericalError);
    // Large but finite coefficients do not overflow thanks to max-subtraction.
    CHECK(std::isfinite(log_partition(Eigen::VectorXd::Constant(6, 400.0), j6)));
}

TEST_CASE("density", "[expfam]") {
    const BasisSpec j8(8);
    for (double y : {0.0, 0.3, 1.0}) CHECK_THAT(density(y, Eigen::VectorXd::Zero(8), j8), WithinAbs(1.0, 1e-15));
    const BasisSpec j1(1);
    CHECK_THAT(density(0.5, Eigen::VectorXd::Constant(1, 0.5), j1), WithinAbs(std::exp(-log_z_closed(0.5)), 1e-12));
    CHECK_THROWS_AS(density(1.2, Eigen::VectorXd::Zero(8), j8), DomainError);

    std::mt19937_64 rng(11);
    const auto fine = make_quadrature(200);
    for (int rep = 0; rep < 100; ++rep) {
        const auto theta = random_theta(8, 2.0, rng);
        const double total = integrate([&](double t) { return density(t, theta, j8); }, fine);
        REQUIRE_THAT(total, WithinAbs(1.0, 1e-10));
        REQUIRE(density(0.0, theta, j8) > 0.0);
    }
}

TEST_CASE("moments and covariance match derivatives of log_partition", "[expfam]") {
    const BasisSpec j1(1);
    const Eigen::VectorXd half = Eigen::VectorXd::Constant(1, 0.5);
    const double h = 1e-6;
    const double fd = (log_partition(half.array() + h, j1) - log_partition(half.array() - h, j1)) / (2 * h);
    CHECK_THAT(moments(half, j1).mu[0], WithinAbs(fd, 1e-7));
    CHECK_THAT(moments(half, j1).mu[0], WithinAbs(mean_closed(0.5), 1e-10));

    CHECK(moments(Eigen::VectorXd::Zero(8), BasisSpec(8)).mu.cwiseAbs().maxCoeff() < 1e-14);
    CHECK((covariance(Eigen::VectorXd::Zero(8), BasisSpec(8)) - Eigen::MatrixXd::Identity(8, 8)).cwiseAbs().maxCoeff() <
          1e-10);

    std::mt19937_64 rng(5);
    for (std::size_t J : {2u, 5u, 8u}) {
        const BasisSpec spec(J);
        for (int rep = 0; rep < 10; ++rep) {
            const auto theta = random_theta(J, 1.0, rng);
            const auto mu = moments(theta, spec).mu;
            const auto V = covariance(theta, spec);
            const double hg = 1e-5;
            const double hh = 1e-4;
            for (std::size_t a = 0; a < J; ++a) {
                Eigen::VectorXd ea = Eigen::VectorXd::Unit(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(a));
                const double g = (log_partition(theta + hg * ea, spec) - log_partition(theta - hg * ea, spec)) / (2 * hg);
                REQUIRE_THAT(mu[static_cast<Eigen::Index>(a)], WithinAbs(g, 1e-6));
                for (std::size_t b = 0; b < J; ++b) {
                    Eigen::VectorXd eb =
                        Eigen::VectorXd::Unit(static_cast<Eigen::Index>(J), static_cast<Eigen::Index>(b));
                    const double hess = (log_partition(theta + hh * ea + hh * eb, spec) -
                                         log_partition(theta + hh * ea - hh * eb, spec) -
                                         log_partition(theta - hh * ea + hh * eb, spec) +
                                         log_partition(theta - hh * ea - hh * eb, spec)) /
                                        (4 * hh * hh);
                    REQUIRE_THAT(V(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)), WithinAbs(hess, 1e-5));
                }
            }
            REQUIRE((V - V.transpose()).cwiseAbs().maxCoeff() == 0.0);
        }
    }
}

TEST_CASE("moments flip odd components under reflection", "[expfam]") {
    const BasisSpec spec(6);
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        const auto theta = random_theta(6, 1.5, rng);
        const auto mu = moments(theta, spec).mu;
        const auto mr = moments(reflect(theta), spec).mu;
        for (Eigen::Index j = 0; j < 6; ++j) {
            const double sign = (j % 2 == 0) ? -1.0 : 1.0;
            CHECK_THAT(mr[j], WithinAbs(sign * mu[j], 1e-12));
        }
    }
}

TEST_CASE("covariance is positive definite on a ball", "[expfam]") {
    std::mt19937_64 rng(8);
    for (std::size_t J = 1; J <= 8; ++J) {
        const BasisSpec spec(J);
        for (int rep = 0; rep < 20; ++rep) {
            const auto theta = random_theta(J, 5.0, rng);
            Eigen::LLT<Eigen::MatrixXd> llt(covariance(theta, spec));
            REQUIRE(llt.info() == Eigen::Success);
        }
    }
}

TEST_CASE("solve_theta", "[expfam]") {
    SECTION("zero target returns theta = 0 without iterating") {
        const BasisSpec spec(8);
        const auto sol = solve_theta(MomentVector{Eigen::VectorXd::Zero(8)}, spec);
        CHECK(sol.converged);
        CHECK(sol.iterations == 0);
        CHECK(sol.theta.isZero(0.0));
        CHECK(sol.residual_inf_norm == 0.0);
    }
    SECTION("round trip") {
        std::mt19937_64 rng(2024);
        for (int rep = 0; rep < 100; ++rep) {
            const std::size_t J = 1 + rep % 8;
            const BasisSpec spec(J);
            const auto theta = random_theta(J, 1.0, rng);
            const auto sol = solve_theta(moments(theta, spec), spec);
            REQUIRE(sol.converged);
            REQUIRE(sol.residual_inf_norm <= 1e-10);
            REQUIRE((sol.theta - theta).cwiseAbs().maxCoeff() < 1e-6);
            for (std::size_t k = 1; k < sol.residual_history.size(); ++k) {
                REQUIRE(sol.residual_history[k] <= sol.residual_history[k - 1]);
            }
        }
    }
    SECTION("J = 1 agrees with bisection on the closed-form mean") {
        for (double target : {0.8, -0.3, 1.5}) {
            const auto sol = solve_theta(MomentVector{Eigen::VectorXd::Constant(1, target)}, BasisSpec(1));
            CHECK_THAT(sol.theta[0], WithinAbs(oracle::bisect_j1(target), 1e-8));
        }
    }
    SECTION("targets outside or on the edge of the moment space") {
        const BasisSpec j1(1);
        CHECK_THROWS_AS(solve_theta(MomentVector{Eigen::VectorXd::Constant(1, std::sqrt(3.0))}, j1), BoundaryMoment);
        CHECK_THROWS_AS(solve_theta(MomentVector{Eigen::VectorXd::Constant(1, -2.0)}, j1), BoundaryMoment);
        // Inside the bound but needing |theta| far above the box.
        CHECK_THROWS_AS(solve_theta(MomentVector{Eigen::VectorXd::Constant(1, 1.73)}, j1), BoundaryMoment);
        Eigen::VectorXd mu = Eigen::VectorXd::Zero(3);
        mu[2] = std::sqrt(7.0);
        CHECK_THROWS_AS(solve_theta(MomentVector{mu}, BasisSpec(3)), BoundaryMoment);
    }
    SECTION("iteration cap") {
        const BasisSpec spec(4);
        Eigen::VectorXd theta(4);
        theta << 2.0, -1.0, 1.0, 0.5;
        SolverOptions opts;
        opts.max_iter = 1;
        try {
            solve_theta(moments(theta, spec), spec, opts);
            FAIL("expected NonConvergence");
        } catch (const NonConvergence& e) {
            CHECK(e.iterations() == 1);
            CHECK(e.residual() > opts.tol);
        }
    }
    SECTION("bad inputs") {
        CHECK_THROWS_AS(solve_theta(MomentVector{Eigen::VectorXd::Zero(2)}, BasisSpec(3)), ConfigError);
        CHECK_THROWS_AS(solve_theta(MomentVector{Eigen::VectorXd::Constant(3, std::nan(""))}, BasisSpec(3)),
                        DomainError);
    }
}

TEST_CASE("pseudo-outcomes", "[expfam]") {
    const BasisSpec j8(8);
    const auto zero = solve_theta(MomentVector{Eigen::VectorXd::Zero(8)}, j8);
    for (double y : {0.0, 0.2, 0.9}) {
        CHECK((pseudo_outcomes_theta(zero, y, j8) - basis_vector(j8, y)).cwiseAbs().maxCoeff() < 1e-12);
    }
    const BasisSpec j1(1);
    const auto z1 = solve_theta(MomentVector{Eigen::VectorXd::Zero(1)}, j1);
    CHECK_THAT(pseudo_outcomes_theta(z1, 1.0, j1)[0], WithinAbs(std::sqrt(3.0), 1e-14));

    // Matching the sample phi-mean makes the pseudo-outcomes average to zero.
    const std::vector<double> ys = {0.05, 0.2, 0.33, 0.4, 0.41, 0.6, 0.77, 0.9};
    const BasisSpec j4(4);
    const auto sol = exponential_series_fit(ys, j4);
    Eigen::VectorXd avg = Eigen::VectorXd::Zero(4);
    for (double y : ys) avg += pseudo_outcomes_theta(sol, y, j4);
    avg /= static_cast<double>(ys.size());
    CHECK(avg.cwiseAbs().maxCoeff() < 1e-10);

    // -V^{-1}(mu - phi) written out with an explicit inverse.
    const Eigen::MatrixXd Vinv = covariance(sol.theta, j4).inverse();
    const Eigen::VectorXd expect = -Vinv * (moments(sol.theta, j4).mu - basis_vector(j4, 0.33));
    CHECK((pseudo_outcomes_theta(sol, 0.33, j4) - expect).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("t_functional", "[expfam]") {
    const BasisSpec j8(8);
    const auto zero = solve_theta(MomentVector{Eigen::VectorXd::Zero(8)}, j8);
    for (double y : {0.0, 0.5, 0.8}) {
        CHECK((t_functional(y, zero, j8).transpose() - basis_vector(j8, y)).cwiseAbs().maxCoeff() < 1e-12);
    }

    std::mt19937_64 rng(77);
    for (int rep = 0; rep < 10; ++rep) {
        const BasisSpec spec(5);
        const auto theta = random_theta(5, 1.0, rng);
        const auto sol = solve_theta(moments(theta, spec), spec);
        Eigen::VectorXd dir = random_theta(5, 1.0, rng).normalized();
        const Eigen::VectorXd theta2 = sol.theta + 1e-4 * dir;
        const Eigen::VectorXd dmu = moments(theta2, spec).mu - sol.mean;
        for (double y : {0.1, 0.45, 0.95}) {
            const double linear = t_functional(y, sol, spec).dot(dmu);
            const double exact = density(y, theta2, spec) - density(y, sol.theta, spec);
            REQUIRE(std::abs(linear - exact) <= 1e-6);
        }
        // T(y) carries the factor f(y; theta), so its integral is V^{-1} int (phi - mu) f = 0.
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(5);
        for (const auto& q : make_quadrature(96)) acc += q.weight * t_functional(q.node, sol, spec);
        REQUIRE(acc.cwiseAbs().maxCoeff() < 1e-9);
    }
}

TEST_CASE("exponential_series_fit", "[expfam]") {
    const BasisSpec j3(3);
    CHECK_THROWS_AS(exponential_series_fit(std::vector<double>{}, j3), ConfigError);
    CHECK_THROWS_AS(exponential_series_fit(std::vector<double>{0.1, 1.1}, j3), DomainError);
    const std::vector<double> ys = {0.1, 0.15, 0.3, 0.5, 0.52, 0.8};
    const auto sol = exponential_series_fit(ys, j3);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(3);
    for (double y : ys) mean += basis_vector(j3, y);
    mean /= static_cast<double>(ys.size());
    CHECK((moments(sol.theta, j3).mu - mean).cwiseAbs().maxCoeff() < 1e-10);
}
