#pragma once

// Conditional density estimate at a query point: forest weights, weighted basis
// moments, and the exponential-series fit matching them, plus delete-group
// standard errors and normal confidence intervals.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cdforest/basis.hpp"
#include "cdforest/errors.hpp"
#include "cdforest/expfam.hpp"
#include "cdforest/forest.hpp"
#include "cdforest/random.hpp"

namespace cdforest {

/// Standard normal quantile. Acklam's rational approximation followed by one
/// Halley correction against erfc.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("normal_quantile: p must lie in (0,1)");
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5;
        const double r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
    return x - u / (1.0 + 0.5 * x * u);
}

struct SEParams {
    std::size_t n_sigma = 0;
    std::size_t d_sigma = 0;
};

/// N_sigma = N/4 and D_sigma = n/20, each at least 1.
inline SEParams default_se_params(std::size_t n, const ForestConfig& cfg) {
    return SEParams{std::max<std::size_t>(1, cfg.N / 4), std::max<std::size_t>(1, n / 20)};
}

struct FitOptions {
    std::optional<SEParams> se;
    std::size_t workers = 1;
    /// Test hook: replace the forest weights by 1/n, which reduces the fit to
    /// the unconditional exponential-series estimator.
    bool uniform_weights = false;
};

class FittedConditionalDensity {
public:
    const std::vector<double>& query_x() const noexcept { return query_x_; }
    const MomentVector& mu_hat() const noexcept { return mu_hat_; }
    const ThetaSolution& theta_hat() const noexcept { return theta_hat_; }
    const WeightVector& weights() const noexcept { return weights_; }
    const Eigen::MatrixXd& per_tree_means() const noexcept { return per_tree_h_; }
    const std::optional<SESubsamplePlan>& plan() const noexcept { return plan_; }
    const std::optional<SEParams>& se_params() const noexcept { return se_; }
    /// mu_{-l} for every delete group (J x N_sigma); empty without a plan.
    const Eigen::MatrixXd& delete_group_means() const noexcept { return deleted_means_; }
    const ForestConfig& config() const noexcept { return config_; }
    const BasisSpec& basis() const noexcept { return spec_; }
    std::size_t sample_size() const noexcept { return n_; }

private:
    friend FittedConditionalDensity fit(const Dataset&, std::span<const double>, const ForestConfig&,
                                        const FitOptions&);
    FittedConditionalDensity(const ForestConfig& cfg) : config_(cfg), spec_(cfg.J) {}

    std::vector<double> query_x_;
    MomentVector mu_hat_;
    ThetaSolution theta_hat_;
    WeightVector weights_;
    Eigen::MatrixXd per_tree_h_;
    std::optional<SESubsamplePlan> plan_;
    std::optional<SEParams> se_;
    Eigen::MatrixXd deleted_means_;
    ForestConfig config_;
    BasisSpec spec_;
    std::size_t n_ = 0;
};

/// Estimates f(.|x). With options.se the trees are drawn from the paired
/// delete-group plan so that standard errors reuse the same forest.
inline FittedConditionalDensity fit(const Dataset& data, std::span<const double> x, const ForestConfig& cfg,
                                    const FitOptions& options = {}) {
    validate(cfg, data.size(), data.dim());
    check_query(cfg, x);
    FittedConditionalDensity out(cfg);
    out.query_x_.assign(x.begin(), x.end());
    out.n_ = data.size();

    if (options.uniform_weights) {
        if (options.se) throw ConfigError("fit: standard errors are unavailable with uniform weights");
        out.weights_.weights.assign(data.size(), 1.0 / static_cast<double>(data.size()));
    } else {
        Rng rng = stream_rng(cfg.seed, kSubsampleStream);
        std::vector<std::vector<std::size_t>> subsamples;
        if (options.se) {
            auto plan = se_subsample_plan(data.size(), cfg, options.se->n_sigma, options.se->d_sigma, rng);
            subsamples = plan.tree_subsamples;
            out.plan_ = std::move(plan);
            out.se_ = options.se;
        } else {
            subsamples = draw_subsamples(data.size(), cfg, rng);
        }
        const auto leaves = grow_forest(x, data, cfg, subsamples, options.workers);
        out.weights_ = weights_from_leaves(leaves, data.size());
        out.per_tree_h_ = per_tree_means(leaves, data.basis_values(out.spec_));
    }
    if (out.plan_) out.deleted_means_ = delete_group_means(*out.plan_, out.per_tree_h_, data.size());
    out.mu_hat_ = mu_hat(out.weights_, data, out.spec_);
    out.theta_hat_ = solve_theta(out.mu_hat_, out.spec_, cfg.solver);
    return out;
}

/// f(y | x) = f(y; theta_hat).
inline double pdf(const FittedConditionalDensity& f, double y) {
    return solution_density(y, f.theta_hat(), f.basis());
}

/// Standard error for an arbitrary row vector in place of T(y). Exposed so
/// tests can probe the homogeneity of the formula.
inline double std_error_with_row(const FittedConditionalDensity& f, const Eigen::RowVectorXd& t_row) {
    if (!f.plan() || !f.se_params()) throw MissingPlan("std_error: fit was built without standard-error parameters");
    return sigma_fe_from_means(f.delete_group_means(), t_row, f.sample_size(), f.se_params()->d_sigma);
}

inline double std_error(const FittedConditionalDensity& f, double y) {
    if (!f.plan()) throw MissingPlan("std_error: fit was built without standard-error parameters");
    return std_error_with_row(f, t_functional(y, f.theta_hat(), f.basis()));
}

struct Interval {
    double lo;
    double hi;
};

/// f(y|x) -/+ z_{1-(1-level)/2} * se.
inline Interval confidence_interval(const FittedConditionalDensity& f, double y, double level) {
    if (!(level > 0.0 && level < 1.0)) throw DomainError("confidence_interval: level must lie in (0,1)");
    const double z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    const double center = pdf(f, y);
    const double half = z * std_error(f, y);
    return {center - half, center + half};
}

}  // namespace cdforest
