#pragma once

// Exponential-series densities f(y; theta) = exp(theta' phi(y)) / Z(theta) on
// [0,1], their moment map and covariance, and the Newton solver that inverts
// the moment map.

#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "cdforest/basis.hpp"
#include "cdforest/errors.hpp"

namespace cdforest {

/// Basis moments E[phi(Y)] of some law on [0,1].
struct MomentVector {
    Eigen::VectorXd mu;

    std::size_t size() const noexcept { return static_cast<std::size_t>(mu.size()); }
};

namespace detail {

// Quantities of the tilted law at theta, all from one pass over the nodes.
struct Tilted {
    double log_partition;
    Eigen::VectorXd probs;  // normalized node masses w_q f(t_q; theta)
    Eigen::VectorXd mean;   // mu(theta)
};

inline void check_dim(const Eigen::VectorXd& theta, const BasisSpec& spec) {
    if (static_cast<std::size_t>(theta.size()) != spec.order()) {
        throw ConfigError("theta has length " + std::to_string(theta.size()) + ", basis order is " +
                          std::to_string(spec.order()));
    }
}

inline Tilted tilt(const Eigen::VectorXd& theta, const BasisSpec& spec) {
    check_dim(theta, spec);
    const Eigen::VectorXd a = spec.node_table() * theta;
    const double m = a.maxCoeff();
    if (!std::isfinite(m) || !a.allFinite()) {
        throw NumericalError("log_partition: theta' phi is not finite");
    }
    Eigen::VectorXd p = spec.node_weights().array() * (a.array() - m).exp();
    const double total = p.sum();
    p /= total;
    Tilted t;
    t.log_partition = m + std::log(total);
    t.mean = spec.node_table().transpose() * p;
    t.probs = std::move(p);
    return t;
}

inline Eigen::MatrixXd tilted_covariance(const Tilted& t, const BasisSpec& spec) {
    const Eigen::MatrixXd centered = spec.node_table().rowwise() - t.mean.transpose();
    Eigen::MatrixXd v = centered.transpose() * (centered.array().colwise() * t.probs.array()).matrix();
    return 0.5 * (v + v.transpose());
}

inline Eigen::LLT<Eigen::MatrixXd> factorize(const Eigen::MatrixXd& v) {
    Eigen::LLT<Eigen::MatrixXd> llt(v);
    if (llt.info() != Eigen::Success) {
        throw NumericalError("covariance V(theta) is not positive definite (quadrature under-resolved?)");
    }
    return llt;
}

}  // namespace detail

/// log of the normalizing constant, with max-subtraction.
inline double log_partition(const Eigen::VectorXd& theta, const BasisSpec& spec) {
    return detail::tilt(theta, spec).log_partition;
}

inline double density(double y, const Eigen::VectorXd& theta, const BasisSpec& spec) {
    const Eigen::VectorXd phi = basis_vector(spec, y);
    detail::check_dim(theta, spec);
    return std::exp(theta.dot(phi) - log_partition(theta, spec));
}

inline MomentVector moments(const Eigen::VectorXd& theta, const BasisSpec& spec) {
    return MomentVector{detail::tilt(theta, spec).mean};
}

/// V(theta): covariance of phi(Y) under f(.; theta). Symmetric positive definite.
inline Eigen::MatrixXd covariance(const Eigen::VectorXd& theta, const BasisSpec& spec) {
    const auto t = detail::tilt(theta, spec);
    Eigen::MatrixXd v = detail::tilted_covariance(t, spec);
    detail::factorize(v);
    return v;
}

struct SolverOptions {
    double tol = 1e-10;
    std::size_t max_iter = 100;
    double box_bound = 50.0;
    std::size_t max_halvings = 30;
};

/// Solution of the moment-matching system together with the factorization of
/// V at the accepted theta. Immutable after construction.
struct ThetaSolution {
    Eigen::VectorXd theta;
    Eigen::VectorXd mean;  // mu(theta)
    double log_partition = 0.0;
    double residual_inf_norm = 0.0;
    std::size_t iterations = 0;
    bool converged = false;
    std::vector<double> residual_history;
    Eigen::LLT<Eigen::MatrixXd> cov_factor;

    std::size_t order() const noexcept { return static_cast<std::size_t>(theta.size()); }
};

namespace detail {

inline ThetaSolution make_solution(Eigen::VectorXd theta, Tilted t, const BasisSpec& spec, double residual,
                                   std::size_t iterations, std::vector<double> history) {
    ThetaSolution sol;
    sol.cov_factor = factorize(tilted_covariance(t, spec));
    sol.theta = std::move(theta);
    sol.mean = std::move(t.mean);
    sol.log_partition = t.log_partition;
    sol.residual_inf_norm = residual;
    sol.iterations = iterations;
    sol.converged = true;
    sol.residual_history = std::move(history);
    return sol;
}

}  // namespace detail

/// Damped Newton iteration for mu(theta) = target, started at theta = 0.
///
/// Throws BoundaryMoment when the target cannot be a moment vector of a
/// density on [0,1] (|mu_j| >= sqrt(2j+1)) or when the iterate leaves the box
/// |theta|_inf <= box_bound. Throws NonConvergence when the residual is still
/// above tol after max_iter iterations or the line search stalls.
inline ThetaSolution solve_theta(const MomentVector& target, const BasisSpec& spec,
                                 const SolverOptions& opts = {}) {
    const auto J = static_cast<Eigen::Index>(spec.order());
    if (target.mu.size() != J) {
        throw ConfigError("solve_theta: target has length " + std::to_string(target.mu.size()) +
                          ", basis order is " + std::to_string(J));
    }
    if (!target.mu.allFinite()) {
        throw DomainError("solve_theta: non-finite target moments");
    }
    for (Eigen::Index j = 0; j < J; ++j) {
        if (std::abs(target.mu[j]) >= std::sqrt(2.0 * static_cast<double>(j + 1) + 1.0)) {
            throw BoundaryMoment("solve_theta: |mu_" + std::to_string(j + 1) +
                                 "| is outside the moment space");
        }
    }

    Eigen::VectorXd theta = Eigen::VectorXd::Zero(J);
    auto state = detail::tilt(theta, spec);
    std::vector<double> history;

    if ((target.mu.array() == 0.0).all()) {
        return detail::make_solution(std::move(theta), std::move(state), spec, 0.0, 0, {0.0});
    }

    Eigen::VectorXd resid = target.mu - state.mean;
    double res = resid.lpNorm<Eigen::Infinity>();
    history.push_back(res);
    std::size_t iter = 0;
    while (res > opts.tol) {
        if (iter >= opts.max_iter) {
            throw NonConvergence("solve_theta: residual " + std::to_string(res) + " after " +
                                     std::to_string(iter) + " iterations",
                                 res, iter);
        }
        const auto llt = detail::factorize(detail::tilted_covariance(state, spec));
        const Eigen::VectorXd step = llt.solve(resid);

        double scale = 1.0;
        bool accepted = false;
        for (std::size_t h = 0; h <= opts.max_halvings; ++h, scale *= 0.5) {
            Eigen::VectorXd cand = theta + scale * step;
            auto cand_state = detail::tilt(cand, spec);
            Eigen::VectorXd cand_resid = target.mu - cand_state.mean;
            const double cand_res = cand_resid.lpNorm<Eigen::Infinity>();
            if (cand_res < res) {
                theta = std::move(cand);
                state = std::move(cand_state);
                resid = std::move(cand_resid);
                res = cand_res;
                accepted = true;
                break;
            }
        }
        ++iter;
        if (!accepted) {
            throw NonConvergence("solve_theta: line search stalled at residual " + std::to_string(res), res,
                                 iter);
        }
        history.push_back(res);
        if (theta.lpNorm<Eigen::Infinity>() > opts.box_bound) {
            throw BoundaryMoment("solve_theta: |theta|_inf exceeded " + std::to_string(opts.box_bound) +
                                 "; target is at or beyond the moment-space boundary");
        }
    }
    return detail::make_solution(std::move(theta), std::move(state), spec, res, iter, std::move(history));
}

/// rho_i(theta) = -V(theta)^{-1} (mu(theta) - phi(y_i)) from the basis values phi(y_i).
inline Eigen::VectorXd pseudo_outcome_from_basis(const ThetaSolution& sol, const Eigen::VectorXd& phi_i) {
    return sol.cov_factor.solve(phi_i - sol.mean);
}

inline Eigen::VectorXd pseudo_outcomes_theta(const ThetaSolution& sol, double y_i, const BasisSpec& spec) {
    if (!sol.converged) throw ConfigError("pseudo_outcomes_theta: solution did not converge");
    return pseudo_outcome_from_basis(sol, basis_vector(spec, y_i));
}

/// Row vector f(y; theta) (phi(y) - mu(theta))' V(theta)^{-1}: the derivative
/// of the density at y with respect to the moment vector.
inline Eigen::RowVectorXd t_functional(double y, const ThetaSolution& sol, const BasisSpec& spec) {
    if (!sol.converged) throw ConfigError("t_functional: solution did not converge");
    const Eigen::VectorXd phi = basis_vector(spec, y);
    const double f = std::exp(sol.theta.dot(phi) - sol.log_partition);
    return (f * sol.cov_factor.solve(phi - sol.mean)).transpose();
}

/// Density of a converged solution at y, reusing the cached normalizer.
inline double solution_density(double y, const ThetaSolution& sol, const BasisSpec& spec) {
    const Eigen::VectorXd phi = basis_vector(spec, y);
    return std::exp(sol.theta.dot(phi) - sol.log_partition);
}

/// Sum_i w_i phi(y_i), accumulated in index order.
inline MomentVector weighted_basis_mean(std::span<const double> weights, std::span<const double> ys,
                                        const BasisSpec& spec) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(spec.order()));
    Eigen::VectorXd phi(acc.size());
    for (std::size_t i = 0; i < ys.size(); ++i) {
        if (weights[i] == 0.0) continue;
        legendre_fill(ys[i], std::span<double>(phi.data(), spec.order()));
        acc += weights[i] * phi;
    }
    return MomentVector{std::move(acc)};
}

/// Unconditional exponential-series estimator: theta solving mu(theta) equal
/// to the sample mean of phi(y_i).
inline ThetaSolution exponential_series_fit(std::span<const double> ys, const BasisSpec& spec,
                                            const SolverOptions& opts = {}) {
    if (ys.empty()) throw ConfigError("exponential_series_fit: empty sample");
    for (double y : ys) {
        if (!(y >= 0.0 && y <= 1.0)) throw DomainError("exponential_series_fit: outcome outside [0,1]");
    }
    const std::vector<double> w(ys.size(), 1.0 / static_cast<double>(ys.size()));
    return solve_theta(weighted_basis_mean(w, ys, spec), spec, opts);
}

}  // namespace cdforest
