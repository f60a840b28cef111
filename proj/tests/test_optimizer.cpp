#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <limits>

#include <Eigen/Dense>

#include "mmr2/optimizer.hpp"

using namespace mmr2;

TEST_CASE("quadratic bowl") {
    Eigen::VectorXd c(3);
    c << 1.0, -2.0, 0.5;
    const Objective f = [&](const Eigen::VectorXd& x) { return (x - c).squaredNorm() + 3.0; };
    const OptimResult r = minimize(f, Eigen::VectorXd::Zero(3));
    CHECK(r.converged);
    CHECK((r.x - c).norm() < 1e-6);
    CHECK(r.f == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(r.evaluations > 0);
}

TEST_CASE("Rosenbrock valley") {
    const Objective f = [](const Eigen::VectorXd& x) {
        return 100.0 * std::pow(x(1) - x(0) * x(0), 2) + std::pow(1.0 - x(0), 2);
    };
    Eigen::VectorXd x0(2);
    x0 << -1.2, 1.0;
    const OptimResult r = minimize(f, x0);
    CHECK(r.x(0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-5));
}

TEST_CASE("non-finite values are treated as infinite") {
    const Objective f = [](const Eigen::VectorXd& x) {
        if (x(0) < 0.0) return std::numeric_limits<double>::quiet_NaN();
        return std::pow(x(0) - 2.0, 2);
    };
    Eigen::VectorXd x0(1);
    x0 << 0.5;
    const OptimResult r = minimize(f, x0);
    CHECK(r.x(0) == doctest::Approx(2.0).epsilon(1e-6));
}

TEST_CASE("coordinates running off to minus infinity are left at the boundary") {
    // minimum approached as x(0) -> -inf, like a log-variance heading to zero
    const Objective f = [](const Eigen::VectorXd& x) { return std::exp(x(0)) + std::pow(x(1) - 1.0, 2); };
    Eigen::VectorXd x0(2);
    x0 << 0.0, 0.0;
    const OptimResult r = minimize(f, x0);
    CHECK(r.x(0) < -20.0);
    CHECK(r.x(1) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(r.f < 1e-8);
}

TEST_CASE("deterministic") {
    const Objective f = [](const Eigen::VectorXd& x) { return std::cosh(x(0) - 0.3) + std::pow(x(1) + x(0), 2); };
    const Eigen::VectorXd x0 = Eigen::VectorXd::Constant(2, 1.5);
    const OptimResult a = minimize(f, x0);
    const OptimResult b = minimize(f, x0);
    CHECK(a.x == b.x);
    CHECK(a.f == b.f);
    CHECK(a.evaluations == b.evaluations);
}

TEST_CASE("polish can be switched off") {
    const Objective f = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
    OptimOptions o;
    o.polish = false;
    const OptimResult r = minimize(f, Eigen::VectorXd::Constant(2, 1.0), o);
    CHECK(r.x.norm() < 1e-3);
}
