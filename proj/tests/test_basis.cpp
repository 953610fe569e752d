#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "cdforest/basis.hpp"
#include "oracles.hpp"

using namespace cdforest;
using Catch::Matchers::WithinAbs;

using oracle::binomial_sum;

TEST_CASE("legendre_eval hand values", "[basis]") {
    CHECK(legendre_eval(0, 0.3) == 1.0);
    CHECK_THAT(legendre_eval(1, 0.5), WithinAbs(0.0, 1e-15));
    CHECK_THAT(legendre_eval(1, 1.0), WithinAbs(std::sqrt(3.0), 1e-15));
    CHECK_THROWS_AS(legendre_eval(2, -0.01), DomainError);
    CHECK_THROWS_AS(legendre_eval(2, 1.5), DomainError);
    CHECK_THROWS_AS(legendre_eval(2, std::nan("")), DomainError);
}

TEST_CASE("recurrence agrees with the binomial sum", "[basis]") {
    for (unsigned l = 0; l <= 12; ++l) {
        for (int i = 0; i <= 100; ++i) {
            const double y = i / 100.0;
            INFO("l=" << l << " y=" << y);
            CHECK_THAT(legendre_eval(l, y), WithinAbs(binomial_sum(l, y), 1e-10));
        }
    }
}

TEST_CASE("sup-norm bound on a fine grid", "[basis]") {
    for (unsigned l = 0; l <= 12; ++l) {
        for (int i = 0; i <= 1000; ++i) {
            REQUIRE(std::abs(legendre_eval(l, i / 1000.0)) <= std::sqrt(2.0 * l + 1.0) + 1e-12);
        }
    }
}

TEST_CASE("basis_vector", "[basis]") {
    const BasisSpec j2(2);
    const auto v = basis_vector(j2, 0.5);
    REQUIRE(v.size() == 2);
    CHECK_THAT(v[0], WithinAbs(0.0, 1e-15));
    CHECK_THAT(v[1], WithinAbs(binomial_sum(2, 0.5), 1e-14));
    CHECK_THAT(v[1], WithinAbs(-1.118033988749895, 1e-12));

    const auto one = basis_vector(BasisSpec(1), 1.0);
    CHECK_THAT(one[0], WithinAbs(std::sqrt(3.0), 1e-15));

    const auto zero = basis_vector(BasisSpec(3), 0.0);
    CHECK_THAT(zero[0], WithinAbs(-std::sqrt(3.0), 1e-14));
    CHECK_THAT(zero[1], WithinAbs(std::sqrt(5.0), 1e-14));
    CHECK_THAT(zero[2], WithinAbs(-std::sqrt(7.0), 1e-14));

    const BasisSpec j8(8);
    for (double y : {0.0, 0.1, 0.37, 0.5, 0.99, 1.0}) {
        const auto b = basis_vector(j8, y);
        for (unsigned l = 1; l <= 8; ++l) CHECK(b[l - 1] == legendre_eval(l, y));
    }
    CHECK_THROWS_AS(basis_vector(j8, 1.0 + 1e-12), DomainError);
}

TEST_CASE("two-point rule", "[basis]") {
    const auto q = make_quadrature(2);
    REQUIRE(q.size() == 2);
    const double off = 1.0 / (2.0 * std::sqrt(3.0));
    CHECK_THAT(q[0].node, WithinAbs(0.5 - off, 1e-15));
    CHECK_THAT(q[1].node, WithinAbs(0.5 + off, 1e-15));
    CHECK_THAT(q[0].weight, WithinAbs(0.5, 1e-15));
    CHECK_THAT(q[1].weight, WithinAbs(0.5, 1e-15));
    CHECK_THAT(integrate([](double t) { return t * t * t; }, q), WithinAbs(0.25, 1e-15));
    CHECK_THROWS_AS(make_quadrature(1), ConfigError);
}

TEST_CASE("Gauss-Legendre exactness up to degree 2n-1", "[basis]") {
    for (std::size_t n : {3u, 5u, 16u, 64u}) {
        const auto q = make_quadrature(n);
        for (std::size_t deg = 0; deg <= 2 * n - 1; ++deg) {
            const double got = integrate([&](double t) { return std::pow(t, static_cast<double>(deg)); }, q);
            INFO("n=" << n << " degree=" << deg);
            CHECK_THAT(got, WithinAbs(1.0 / static_cast<double>(deg + 1), 1e-13));
        }
    }
}

TEST_CASE("integrate", "[basis]") {
    const auto q = make_quadrature(64);
    CHECK_THAT(integrate([](double) { return 1.0; }, q), WithinAbs(1.0, 1e-14));
    CHECK_THAT(integrate([](double t) { return legendre_eval(1, t); }, q), WithinAbs(0.0, 1e-14));
    CHECK_THAT(integrate([](double t) { return std::exp(t); }, q), WithinAbs(std::numbers::e - 1.0, 1e-12));
    CHECK_THAT(integrate([](double t) { return legendre_eval(5, t) * legendre_eval(5, t); }, q),
               WithinAbs(1.0, 1e-12));
    CHECK_THROWS_AS(integrate([](double t) { return t > 0.5 ? std::nan("") : 1.0; }, q), NumericalError);
    CHECK_THROWS_AS(integrate([](double) { return INFINITY; }, q), NumericalError);
}

TEST_CASE("orthonormality under the default rule", "[basis]") {
    for (std::size_t J : {1u, 8u, 12u}) {
        const BasisSpec spec(J);
        CHECK(spec.quadrature().size() == default_quadrature_size(J));
        for (unsigned j = 0; j <= 12; ++j) {
            for (unsigned k = 0; k <= 12; ++k) {
                const double ip =
                    integrate([&](double t) { return legendre_eval(j, t) * legendre_eval(k, t); }, spec.quadrature());
                REQUIRE(std::abs(ip - (j == k ? 1.0 : 0.0)) < 1e-10);
            }
        }
    }
    CHECK(default_quadrature_size(8) == 64);
    CHECK(default_quadrature_size(20) == 96);
}

TEST_CASE("BasisSpec validation", "[basis]") {
    CHECK_THROWS_AS(BasisSpec(0), ConfigError);
    CHECK_THROWS_AS(BasisSpec(2, Quadrature{{0.0, 0.5}, {0.7, 0.5}}), ConfigError);  // node on the boundary
    CHECK_THROWS_AS(BasisSpec(2, Quadrature{{0.3, -0.5}, {0.7, 1.5}}), ConfigError);  // negative weight
    CHECK_THROWS_AS(BasisSpec(2, Quadrature{{0.3, 0.5}, {0.7, 0.6}}), ConfigError);   // weights sum to 1.1
    // A 2-point rule cannot integrate phi_2^2 (degree 4) exactly.
    CHECK_THROWS_AS(BasisSpec(2, make_quadrature(2)), ConfigError);
    const BasisSpec ok(3, make_quadrature(16));
    CHECK(ok.node_table().rows() == 16);
    CHECK(ok.node_table().cols() == 3);
    CHECK_THAT(ok.node_weights().sum(), WithinAbs(1.0, 1e-14));
}

TEST_CASE("node doubling leaves integrals of exp(theta' phi) unchanged", "[basis]") {
    const auto q64 = make_quadrature(64);
    const auto q128 = make_quadrature(128);
    const double theta[] = {1.5, -2.0, 0.8, 0.5, -0.7, 0.3, 0.2, -0.4};
    auto f = [&](double t) {
        double a = 0.0;
        for (unsigned j = 1; j <= 8; ++j) a += theta[j - 1] * legendre_eval(j, t);
        return std::exp(a);
    };
    CHECK_THAT(integrate(f, q64), WithinAbs(integrate(f, q128), 1e-10 * integrate(f, q128)));
}
