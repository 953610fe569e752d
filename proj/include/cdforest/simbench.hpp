#pragma once

// Monte Carlo designs with four covariates (truncated normal X, truncated and
// rescaled Beta / log-normal / normal-mixture outcomes), the oracle kernel
// ratio estimator, and the replication harness computing bias, standard
// deviation, average standard error, coverage and MISE.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <boost/math/distributions/beta.hpp>
#include <boost/math/distributions/lognormal.hpp>
#include <boost/math/distributions/normal.hpp>
#include <boost/math/tools/roots.hpp>

#include "cdforest/errors.hpp"
#include "cdforest/estimator.hpp"
#include "cdforest/forest.hpp"
#include "cdforest/random.hpp"

namespace cdforest::sim {

inline constexpr std::size_t kCovariates = 4;

enum class DesignKind { D1_Beta, D2_LogNormal, D3_GaussMixture };

inline std::string design_name(DesignKind k) {
    switch (k) {
        case DesignKind::D1_Beta: return "D1";
        case DesignKind::D2_LogNormal: return "D2";
        case DesignKind::D3_GaussMixture: return "D3";
    }
    return "?";
}

inline DesignKind parse_design(const std::string& name) {
    if (name == "D1") return DesignKind::D1_Beta;
    if (name == "D2") return DesignKind::D2_LogNormal;
    if (name == "D3") return DesignKind::D3_GaussMixture;
    throw ConfigError("unknown design '" + name + "' (expected D1, D2 or D3)");
}

/// Design points in y used by the reported tables.
inline std::vector<double> default_design_points() { return {0.125, 0.25, 0.375, 0.5, 0.625, 0.75, 0.875}; }

inline std::vector<double> center_point() { return std::vector<double>(kCovariates, 0.5); }

namespace detail {

inline const boost::math::normal_distribution<double>& std_normal() {
    static const boost::math::normal_distribution<double> n(0.0, 1.0);
    return n;
}

// Untruncated conditional law of the outcome, on its original scale.
struct Law {
    DesignKind kind;
    double p1;  // alpha | log-mean | mixture mean magnitude
    double p2;  // beta  | log-sd   | component sd
    double lo;
    double hi;

    double cdf(double z) const {
        switch (kind) {
            case DesignKind::D1_Beta: return boost::math::cdf(boost::math::beta_distribution<double>(p1, p2), z);
            case DesignKind::D2_LogNormal:
                return boost::math::cdf(boost::math::lognormal_distribution<double>(p1, p2), z);
            case DesignKind::D3_GaussMixture:
                return 0.5 * boost::math::cdf(std_normal(), (z + p1) / p2) +
                       0.5 * boost::math::cdf(std_normal(), (z - p1) / p2);
        }
        return 0.0;
    }

    double pdf(double z) const {
        switch (kind) {
            case DesignKind::D1_Beta: return boost::math::pdf(boost::math::beta_distribution<double>(p1, p2), z);
            case DesignKind::D2_LogNormal:
                return boost::math::pdf(boost::math::lognormal_distribution<double>(p1, p2), z);
            case DesignKind::D3_GaussMixture:
                return 0.5 * (boost::math::pdf(std_normal(), (z + p1) / p2) +
                              boost::math::pdf(std_normal(), (z - p1) / p2)) / p2;
        }
        return 0.0;
    }

    double quantile(double u) const {
        switch (kind) {
            case DesignKind::D1_Beta:
                return boost::math::quantile(boost::math::beta_distribution<double>(p1, p2), u);
            case DesignKind::D2_LogNormal:
                return boost::math::quantile(boost::math::lognormal_distribution<double>(p1, p2), u);
            case DesignKind::D3_GaussMixture: {
                auto f = [&](double z) { return cdf(z) - u; };
                const double flo = f(lo);
                const double fhi = f(hi);
                if (flo >= 0.0) return lo;
                if (fhi <= 0.0) return hi;
                std::uintmax_t iters = 200;
                const auto r = boost::math::tools::toms748_solve(f, lo, hi, flo, fhi,
                                                                 boost::math::tools::eps_tolerance<double>(52), iters);
                return 0.5 * (r.first + r.second);
            }
        }
        return 0.0;
    }
};

inline Law law_at(DesignKind kind, std::span<const double> x) {
    if (x.size() < 3) throw ConfigError("design laws need at least three covariates");
    switch (kind) {
        case DesignKind::D1_Beta: return {kind, 1.0 + x[0] / 4.0 + x[1] / 4.0, 1.0 + x[2] / 2.0, 0.1, 0.9};
        case DesignKind::D2_LogNormal: {
            const double var = 1.0 + (x[2] - 0.5) * (x[2] - 0.5);
            return {kind, 0.5 + x[0] + x[1], std::sqrt(var), 0.25, 5.0};
        }
        case DesignKind::D3_GaussMixture: {
            const double var = 18.0 + (x[2] - 0.5) * (x[2] - 0.5) / 10.0;
            return {kind, 5.0 + x[0] + x[1], std::sqrt(var), -12.0, 12.0};
        }
    }
    throw ConfigError("unknown design");
}

}  // namespace detail

/// Standard deviation of each covariate before truncation (variance 1/8).
inline const double kCovariateSd = std::sqrt(1.0 / 8.0);

/// n draws from N((1/2)1_4, sd^2 I_4) truncated to [0,1]^4, row-major. The
/// covariance is diagonal, so each coordinate is an independent truncated
/// normal sampled by inverse CDF.
inline std::vector<double> gen_covariates(std::size_t n, Rng& rng, double sd = kCovariateSd) {
    if (!(sd > 0.0)) throw ConfigError("gen_covariates: sd must be positive");
    const auto& z = detail::std_normal();
    const double u_lo = boost::math::cdf(z, -0.5 / sd);
    const double u_hi = boost::math::cdf(z, 0.5 / sd);
    std::vector<double> x(n * kCovariates);
    for (auto& v : x) {
        double u = u_lo + (u_hi - u_lo) * uniform01(rng);
        if (u <= 0.0) u = u_lo;
        v = std::clamp(0.5 + sd * boost::math::quantile(z, u), 0.0, 1.0);
    }
    return x;
}

/// Conditional CDF of the rescaled outcome at y in [0,1].
inline double true_cdf(DesignKind kind, double y, std::span<const double> x) {
    if (!(y >= 0.0 && y <= 1.0)) throw DomainError("true_cdf: y outside [0,1]");
    const auto law = detail::law_at(kind, x);
    const double f_lo = law.cdf(law.lo);
    const double mass = law.cdf(law.hi) - f_lo;
    return (law.cdf(law.lo + (law.hi - law.lo) * y) - f_lo) / mass;
}

/// Conditional density of the rescaled outcome at y in [0,1].
inline double true_density(DesignKind kind, double y, std::span<const double> x) {
    if (!(y >= 0.0 && y <= 1.0)) throw DomainError("true_density: y outside [0,1]");
    const auto law = detail::law_at(kind, x);
    const double mass = law.cdf(law.hi) - law.cdf(law.lo);
    return law.pdf(law.lo + (law.hi - law.lo) * y) * (law.hi - law.lo) / mass;
}

/// One outcome draw by inverse CDF on the truncated support, rescaled to [0,1].
inline double gen_outcome(DesignKind kind, std::span<const double> x, Rng& rng) {
    const auto law = detail::law_at(kind, x);
    const double f_lo = law.cdf(law.lo);
    const double f_hi = law.cdf(law.hi);
    const double u = f_lo + (f_hi - f_lo) * uniform01(rng);
    double z = law.quantile(std::clamp(u, f_lo, f_hi));
    z = std::clamp(z, law.lo, law.hi);
    return std::clamp((z - law.lo) / (law.hi - law.lo), 0.0, 1.0);
}

inline Dataset simulate(DesignKind kind, std::size_t n, Rng& rng, double covariate_sd = kCovariateSd) {
    auto x = gen_covariates(n, rng, covariate_sd);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
        y[i] = gen_outcome(kind, std::span<const double>(x.data() + i * kCovariates, kCovariates), rng);
    }
    return Dataset(std::move(y), std::move(x), kCovariates);
}

// ---------------------------------------------------------------------------
// Oracle kernel estimator

inline double triweight(double u) {
    if (std::abs(u) > 1.0) return 0.0;
    const double v = 1.0 - u * u;
    return 35.0 / 32.0 * v * v * v;
}

struct KernelBandwidths {
    double h_y = 0.0;
    std::array<double, 3> h_num{};  // covariates 1-3, joint density
    std::array<double, 3> h_den{};  // covariates 1-3, marginal density
};

inline double sample_sd(std::span<const double> v) {
    double mean = 0.0;
    for (double a : v) mean += a;
    mean /= static_cast<double>(v.size());
    double ss = 0.0;
    for (double a : v) ss += (a - mean) * (a - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

/// h = 1.06 sd n^{-1/8} (joint) and 1.06 sd n^{-1/7} (covariate marginal).
inline KernelBandwidths oracle_bandwidths(const Dataset& data) {
    if (data.size() < 2) throw ConfigError("oracle_bandwidths: need at least two observations");
    if (data.dim() < 3) throw ConfigError("oracle_bandwidths: need at least three covariates");
    const double n = static_cast<double>(data.size());
    KernelBandwidths h;
    h.h_y = 1.06 * sample_sd(data.ys()) * std::pow(n, -1.0 / 8.0);
    std::vector<double> col(data.size());
    for (std::size_t m = 0; m < 3; ++m) {
        for (std::size_t i = 0; i < data.size(); ++i) col[i] = data.x(i, m);
        const double sd = sample_sd(col);
        h.h_num[m] = 1.06 * sd * std::pow(n, -1.0 / 8.0);
        h.h_den[m] = 1.06 * sd * std::pow(n, -1.0 / 7.0);
    }
    return h;
}

/// Product tri-weight ratio estimator f_yx(y, x) / f_x(x) using covariates 1-3 only.
inline double kernel_baseline(const Dataset& data, double y, std::span<const double> x, const KernelBandwidths& h) {
    if (data.size() == 0) throw ConfigError("kernel_baseline: empty dataset");
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        double kn = triweight((y - data.y(i)) / h.h_y) / h.h_y;
        double kd = 1.0;
        for (std::size_t m = 0; m < 3; ++m) {
            const double diff = x[m] - data.x(i, m);
            kn *= triweight(diff / h.h_num[m]) / h.h_num[m];
            kd *= triweight(diff / h.h_den[m]) / h.h_den[m];
        }
        num += kn;
        den += kd;
    }
    if (!(den > 0.0)) throw ZeroDenominator("kernel_baseline: no observations near the query point");
    return num / den;  // the 1/n factors cancel
}

inline double kernel_baseline(const Dataset& data, double y, std::span<const double> x) {
    return kernel_baseline(data, y, x, oracle_bandwidths(data));
}

// ---------------------------------------------------------------------------
// Replication harness

/// Composite Simpson rule for samples on a uniform grid with an odd number of points.
inline double simpson(std::span<const double> values, double a, double b) {
    const std::size_t m = values.size();
    if (m < 3 || m % 2 == 0) throw ConfigError("simpson: need an odd number of at least 3 grid points");
    const double h = (b - a) / static_cast<double>(m - 1);
    double acc = values.front() + values.back();
    for (std::size_t i = 1; i + 1 < m; ++i) acc += (i % 2 ? 4.0 : 2.0) * values[i];
    return acc * h / 3.0;
}

struct MCOptions {
    std::size_t n = 1000;
    std::size_t reps = 100;
    ForestConfig forest;
    std::optional<SEParams> se;     // defaults to default_se_params when unset
    bool with_se = true;
    std::vector<double> design_points = default_design_points();
    double level = 0.95;
    std::size_t mise_grid = 141;
    double mise_lo = 0.15;
    double mise_hi = 0.85;
    bool with_kernel = false;
    double covariate_sd = kCovariateSd;
    std::size_t workers = 1;
    std::uint64_t seed = 0;
    bool same_seed_all_reps = false;  // test hook: every replication reuses stream 0
};

struct MCPointStats {
    double y = 0.0;
    double truth = 0.0;
    double bias = 0.0;
    double sd = 0.0;
    double avg_se = 0.0;
    double coverage = 0.0;
    double kernel_bias = 0.0;
    double kernel_sd = 0.0;
};

struct MCReport {
    DesignKind design = DesignKind::D1_Beta;
    std::size_t n = 0;
    std::size_t reps_requested = 0;
    std::size_t reps_ok = 0;
    std::vector<std::string> failures;
    std::vector<MCPointStats> points;
    double mise = 0.0;
    double kernel_mise = 0.0;
    std::size_t kernel_reps_ok = 0;
    double runtime_seconds = 0.0;
    MCOptions options;
};

inline constexpr std::uint64_t kReplicationStream = 7;

namespace detail {

struct RepResult {
    bool ok = false;
    std::string error;
    std::vector<double> estimate;
    std::vector<double> se;
    std::vector<std::uint8_t> covered;
    double ise = 0.0;
    bool kernel_ok = false;
    std::vector<double> kernel;
    double kernel_ise = 0.0;
};

inline double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double a : v) s += a;
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double sd_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double a : v) ss += (a - m) * (a - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace detail

/// Grid of m uniformly spaced points over [a, b].
inline std::vector<double> uniform_grid(double a, double b, std::size_t m) {
    std::vector<double> g(m);
    for (std::size_t i = 0; i < m; ++i) g[i] = a + (b - a) * static_cast<double>(i) / static_cast<double>(m - 1);
    return g;
}

/// Runs `reps` independent replications at x = (1/2)1_4 and aggregates them.
/// Failed replications are reported and excluded from the aggregates.
inline MCReport run_mc(DesignKind design, const MCOptions& opts) {
    if (opts.reps < 2) throw ConfigError("run_mc: need at least 2 replications");
    if (!(opts.level > 0.0 && opts.level < 1.0)) throw ConfigError("run_mc: level must lie in (0,1)");
    const auto start = std::chrono::steady_clock::now();
    const auto x = center_point();
    const auto grid = uniform_grid(opts.mise_lo, opts.mise_hi, opts.mise_grid);
    std::vector<double> truth_grid(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) truth_grid[g] = true_density(design, grid[g], x);
    std::vector<double> truth_pts(opts.design_points.size());
    for (std::size_t k = 0; k < truth_pts.size(); ++k) truth_pts[k] = true_density(design, opts.design_points[k], x);
    const double z = normal_quantile(1.0 - (1.0 - opts.level) / 2.0);

    std::vector<detail::RepResult> results(opts.reps);
    parallel_for(opts.reps, opts.workers, [&](std::size_t r) {
        auto& res = results[r];
        Rng rng = stream_rng(opts.seed, kReplicationStream, opts.same_seed_all_reps ? 0 : r);
        const Dataset data = simulate(design, opts.n, rng, opts.covariate_sd);
        ForestConfig cfg = opts.forest;
        cfg.seed = rng();
        try {
            FitOptions fo;
            if (opts.with_se) fo.se = opts.se ? *opts.se : default_se_params(opts.n, cfg);
            const auto fitted = fit(data, x, cfg, fo);
            const std::size_t k = opts.design_points.size();
            res.estimate.resize(k);
            res.se.assign(k, 0.0);
            res.covered.assign(k, 0);
            for (std::size_t i = 0; i < k; ++i) {
                const double y = opts.design_points[i];
                res.estimate[i] = pdf(fitted, y);
                if (opts.with_se) {
                    res.se[i] = std_error(fitted, y);
                    const double lo = res.estimate[i] - z * res.se[i];
                    const double hi = res.estimate[i] + z * res.se[i];
                    res.covered[i] = (truth_pts[i] >= lo && truth_pts[i] <= hi) ? 1 : 0;
                }
            }
            std::vector<double> sq(grid.size());
            for (std::size_t g = 0; g < grid.size(); ++g) {
                const double e = pdf(fitted, grid[g]) - truth_grid[g];
                sq[g] = e * e;
            }
            res.ise = simpson(sq, opts.mise_lo, opts.mise_hi);
            res.ok = true;
        } catch (const Error& e) {
            res.error = e.what();
        }
        if (opts.with_kernel) {
            try {
                const auto h = oracle_bandwidths(data);
                res.kernel.resize(opts.design_points.size());
                for (std::size_t i = 0; i < res.kernel.size(); ++i) {
                    res.kernel[i] = kernel_baseline(data, opts.design_points[i], x, h);
                }
                std::vector<double> sq(grid.size());
                for (std::size_t g = 0; g < grid.size(); ++g) {
                    const double e = kernel_baseline(data, grid[g], x, h) - truth_grid[g];
                    sq[g] = e * e;
                }
                res.kernel_ise = simpson(sq, opts.mise_lo, opts.mise_hi);
                res.kernel_ok = true;
            } catch (const Error&) {
            }
        }
    });

    MCReport report;
    report.design = design;
    report.n = opts.n;
    report.reps_requested = opts.reps;
    report.options = opts;
    std::vector<double> ises, kernel_ises;
    const std::size_t k = opts.design_points.size();
    std::vector<std::vector<double>> est(k), ses(k), kern(k);
    std::vector<double> hits(k, 0.0);
    for (std::size_t r = 0; r < opts.reps; ++r) {
        const auto& res = results[r];
        if (!res.ok) {
            report.failures.push_back("replication " + std::to_string(r) + ": " + res.error);
        } else {
            ++report.reps_ok;
            ises.push_back(res.ise);
            for (std::size_t i = 0; i < k; ++i) {
                est[i].push_back(res.estimate[i]);
                ses[i].push_back(res.se[i]);
                hits[i] += res.covered[i];
            }
        }
        if (res.kernel_ok) {
            ++report.kernel_reps_ok;
            kernel_ises.push_back(res.kernel_ise);
            for (std::size_t i = 0; i < k; ++i) kern[i].push_back(res.kernel[i]);
        }
    }
    for (std::size_t i = 0; i < k; ++i) {
        MCPointStats p;
        p.y = opts.design_points[i];
        p.truth = truth_pts[i];
        p.bias = detail::mean_of(est[i]) - p.truth;
        p.sd = detail::sd_of(est[i]);
        p.avg_se = detail::mean_of(ses[i]);
        p.coverage = report.reps_ok ? hits[i] / static_cast<double>(report.reps_ok) : 0.0;
        if (!kern[i].empty()) {
            p.kernel_bias = detail::mean_of(kern[i]) - p.truth;
            p.kernel_sd = detail::sd_of(kern[i]);
        }
        report.points.push_back(p);
    }
    report.mise = detail::mean_of(ises);
    report.kernel_mise = detail::mean_of(kernel_ises);
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return report;
}

}  // namespace cdforest::sim
