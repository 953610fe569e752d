#pragma once

// Orthonormal shifted Legendre polynomials on [0,1] and Gauss-Legendre
// quadrature. Every integral over [0,1] in the library goes through the
// quadrature held by a BasisSpec.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cdforest/errors.hpp"

namespace cdforest {

struct QuadratureNode {
    double node;
    double weight;
};

using Quadrature = std::vector<QuadratureNode>;

/// phi_l(y) = sqrt(2l+1) P_l(2y-1), evaluated with the three-term recurrence.
inline double legendre_eval(unsigned l, double y) {
    if (!(y >= 0.0 && y <= 1.0)) {
        throw DomainError("legendre_eval: y = " + std::to_string(y) + " outside [0,1]");
    }
    const double x = 2.0 * y - 1.0;
    double p_prev = 1.0;
    if (l == 0) return 1.0;
    double p = x;
    for (unsigned k = 1; k < l; ++k) {
        const double next = ((2.0 * k + 1.0) * x * p - k * p_prev) / (k + 1.0);
        p_prev = p;
        p = next;
    }
    return std::sqrt(2.0 * l + 1.0) * p;
}

/// Writes phi_1(y), ..., phi_J(y) into out (size J). No domain check.
inline void legendre_fill(double y, std::span<double> out) {
    const double x = 2.0 * y - 1.0;
    double p_prev = 1.0;
    double p = x;
    for (std::size_t l = 1; l <= out.size(); ++l) {
        out[l - 1] = std::sqrt(2.0 * l + 1.0) * p;
        const double next = ((2.0 * l + 1.0) * x * p - l * p_prev) / (l + 1.0);
        p_prev = p;
        p = next;
    }
}

/// Gauss-Legendre rule with n_nodes points mapped from [-1,1] to [0,1].
/// Weights sum to one.
inline Quadrature make_quadrature(std::size_t n_nodes) {
    if (n_nodes < 2) {
        throw ConfigError("make_quadrature: need at least 2 nodes");
    }
    Quadrature rule(n_nodes);
    const std::size_t half = (n_nodes + 1) / 2;
    for (std::size_t i = 0; i < half; ++i) {
        // Chebyshev-like initial guess, then Newton on P_n.
        double z = std::cos(std::numbers::pi * (i + 0.75) / (n_nodes + 0.5));
        double dp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p0 = 1.0;
            double p1 = z;
            for (std::size_t k = 2; k <= n_nodes; ++k) {
                const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
                p0 = p1;
                p1 = p2;
            }
            dp = n_nodes * (z * p1 - p0) / (z * z - 1.0);
            const double dz = p1 / dp;
            z -= dz;
            if (std::abs(dz) < 1e-16) break;
        }
        // recompute derivative at the converged root
        double p0 = 1.0;
        double p1 = z;
        for (std::size_t k = 2; k <= n_nodes; ++k) {
            const double p2 = ((2.0 * k - 1.0) * z * p1 - (k - 1.0) * p0) / k;
            p0 = p1;
            p1 = p2;
        }
        dp = n_nodes * (z * p1 - p0) / (z * z - 1.0);
        const double w = 1.0 / ((1.0 - z * z) * dp * dp);  // 2/((1-z^2)P'^2) halved for [0,1]
        rule[i] = {0.5 * (1.0 - z), w};
        rule[n_nodes - 1 - i] = {0.5 * (1.0 + z), w};
    }
    return rule;
}

/// Sum of w_i f(t_i). Throws NumericalError if f is non-finite at a node.
template <class F>
double integrate(F&& f, const Quadrature& quad) {
    double total = 0.0;
    for (const auto& q : quad) {
        const double v = f(q.node);
        if (!std::isfinite(v)) {
            throw NumericalError("integrate: non-finite integrand at t = " + std::to_string(q.node));
        }
        total += q.weight * v;
    }
    return total;
}

inline std::size_t default_quadrature_size(std::size_t order) {
    return std::max<std::size_t>(64, 4 * order + 16);
}

/// Basis order J together with the quadrature used for its integrals. The
/// basis values at the quadrature nodes are tabulated once.
class BasisSpec {
public:
    explicit BasisSpec(std::size_t order)
        : BasisSpec(order, make_quadrature(default_quadrature_size(order))) {}

    BasisSpec(std::size_t order, Quadrature quad) : order_(order), quad_(std::move(quad)) {
        if (order_ < 1) throw ConfigError("BasisSpec: order J must be >= 1");
        if (quad_.empty()) throw ConfigError("BasisSpec: empty quadrature");
        double wsum = 0.0;
        for (const auto& q : quad_) {
            if (!(q.node > 0.0 && q.node < 1.0) || !(q.weight > 0.0)) {
                throw ConfigError("BasisSpec: quadrature nodes must lie in (0,1) with positive weights");
            }
            wsum += q.weight;
        }
        if (std::abs(wsum - 1.0) > 1e-12) {
            throw ConfigError("BasisSpec: quadrature weights must sum to 1");
        }
        table_.resize(static_cast<Eigen::Index>(quad_.size()), static_cast<Eigen::Index>(order_));
        weights_.resize(static_cast<Eigen::Index>(quad_.size()));
        std::vector<double> row(order_);
        for (std::size_t q = 0; q < quad_.size(); ++q) {
            legendre_fill(quad_[q].node, row);
            for (std::size_t j = 0; j < order_; ++j) {
                table_(static_cast<Eigen::Index>(q), static_cast<Eigen::Index>(j)) = row[j];
            }
            weights_[static_cast<Eigen::Index>(q)] = quad_[q].weight;
        }
        // The rule must reproduce the Gram matrix of phi_0..phi_J.
        const Eigen::MatrixXd gram = table_.transpose() * weights_.asDiagonal() * table_;
        const Eigen::VectorXd firsts = table_.transpose() * weights_;
        const double err = std::max((gram - Eigen::MatrixXd::Identity(gram.rows(), gram.cols())).cwiseAbs().maxCoeff(),
                                    firsts.cwiseAbs().maxCoeff());
        if (!(err <= 1e-10)) {
            throw ConfigError("BasisSpec: quadrature with " + std::to_string(quad_.size()) +
                              " nodes does not resolve the basis of order " + std::to_string(order_));
        }
    }

    std::size_t order() const noexcept { return order_; }
    const Quadrature& quadrature() const noexcept { return quad_; }

    /// phi_j(t_q) for quadrature node q (rows) and j = 1..J (columns).
    const Eigen::MatrixXd& node_table() const noexcept { return table_; }
    const Eigen::VectorXd& node_weights() const noexcept { return weights_; }

private:
    std::size_t order_;
    Quadrature quad_;
    Eigen::MatrixXd table_;
    Eigen::VectorXd weights_;
};

/// (phi_1(y), ..., phi_J(y)); the constant phi_0 is excluded.
inline Eigen::VectorXd basis_vector(const BasisSpec& spec, double y) {
    if (!(y >= 0.0 && y <= 1.0)) {
        throw DomainError("basis_vector: y = " + std::to_string(y) + " outside [0,1]");
    }
    Eigen::VectorXd out(static_cast<Eigen::Index>(spec.order()));
    legendre_fill(y, std::span<double>(out.data(), spec.order()));
    return out;
}

}  // namespace cdforest
