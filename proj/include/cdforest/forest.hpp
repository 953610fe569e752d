#pragma once

// Honest branch growth toward a query point, forest similarity weights, and the
// paired-subsample plan used for delete-group standard errors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "cdforest/basis.hpp"
#include "cdforest/errors.hpp"
#include "cdforest/expfam.hpp"
#include "cdforest/random.hpp"

namespace cdforest {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Observations (y_i, x_i) with y_i in [0,1] and x_i in R^d, stored row-major.
class Dataset {
public:
    Dataset() = default;

    Dataset(std::vector<double> y, std::vector<double> x, std::size_t dim)
        : y_(std::move(y)), x_(std::move(x)), dim_(dim) {
        if (dim_ == 0) throw ConfigError("Dataset: covariate dimension must be positive");
        if (x_.size() != y_.size() * dim_) {
            throw ConfigError("Dataset: covariate storage does not match n * d");
        }
        for (std::size_t i = 0; i < y_.size(); ++i) {
            if (!(y_[i] >= 0.0 && y_[i] <= 1.0)) {
                throw DomainError("Dataset: outcome of row " + std::to_string(i) + " is outside [0,1]");
            }
        }
        for (double v : x_) {
            if (!std::isfinite(v)) throw DomainError("Dataset: non-finite covariate");
        }
    }

    std::size_t size() const noexcept { return y_.size(); }
    std::size_t dim() const noexcept { return dim_; }
    double y(std::size_t i) const { return y_[i]; }
    std::span<const double> ys() const noexcept { return y_; }
    std::span<const double> x(std::size_t i) const { return {x_.data() + i * dim_, dim_}; }
    double x(std::size_t i, std::size_t m) const { return x_[i * dim_ + m]; }

    /// phi(y_i) for every row (n x J).
    RowMatrix basis_values(const BasisSpec& spec) const {
        RowMatrix phi(static_cast<Eigen::Index>(size()), static_cast<Eigen::Index>(spec.order()));
        for (std::size_t i = 0; i < size(); ++i) {
            legendre_fill(y_[i], std::span<double>(phi.row(static_cast<Eigen::Index>(i)).data(), spec.order()));
        }
        return phi;
    }

private:
    std::vector<double> y_;
    std::vector<double> x_;
    std::size_t dim_ = 0;
};

/// Axis-aligned box. The upper face is always closed; the lower face is closed
/// for the initial parent and open after a split moves it (children are
/// {x_m <= t} and {x_m > t}).
struct Box {
    std::vector<double> lo;
    std::vector<double> hi;
    std::vector<std::uint8_t> lo_open;

    Box() = default;
    Box(std::vector<double> lower, std::vector<double> upper)
        : lo(std::move(lower)), hi(std::move(upper)), lo_open(lo.size(), 0) {
        if (lo.size() != hi.size()) throw ConfigError("Box: bound dimensions differ");
        for (std::size_t m = 0; m < lo.size(); ++m) {
            if (!(lo[m] <= hi[m])) throw ConfigError("Box: lower bound exceeds upper bound");
        }
    }

    static Box cube(std::size_t d, double lower, double upper) {
        return Box(std::vector<double>(d, lower), std::vector<double>(d, upper));
    }

    std::size_t dim() const noexcept { return lo.size(); }

    bool contains(std::span<const double> p) const {
        for (std::size_t m = 0; m < lo.size(); ++m) {
            const bool above = lo_open[m] ? p[m] > lo[m] : p[m] >= lo[m];
            if (!above || p[m] > hi[m]) return false;
        }
        return true;
    }

    /// True if every point of *this lies in other.
    bool within(const Box& other) const {
        for (std::size_t m = 0; m < lo.size(); ++m) {
            if (lo[m] < other.lo[m] || hi[m] > other.hi[m]) return false;
            if (lo[m] == other.lo[m] && other.lo_open[m] && !lo_open[m]) return false;
        }
        return true;
    }

    bool operator==(const Box&) const = default;
};

enum class SplitScheme { ThetaHeterogeneity, MuHeterogeneity };

/// Law of the set of dimensions allowed at each split. Both kinds put positive
/// mass on every singleton and none on the empty set.
struct SplitDimLaw {
    enum class Kind { Poisson, Singleton };
    Kind kind = Kind::Poisson;
    double lambda = 5.0;

    /// Sorted, distinct, 0-based dimensions.
    std::vector<std::size_t> draw(std::size_t d, Rng& rng) const {
        std::size_t k = 1;
        if (kind == Kind::Poisson) {
            std::poisson_distribution<long> pois(lambda);
            k = static_cast<std::size_t>(std::clamp<long>(pois(rng), 1, static_cast<long>(d)));
        }
        std::vector<std::size_t> dims(d);
        std::iota(dims.begin(), dims.end(), std::size_t{0});
        for (std::size_t i = 0; i < k; ++i) {
            std::uniform_int_distribution<std::size_t> pick(i, d - 1);
            std::swap(dims[i], dims[pick(rng)]);
        }
        dims.resize(k);
        std::sort(dims.begin(), dims.end());
        return dims;
    }
};

struct ForestConfig {
    std::size_t s = 0;        // subsample size
    std::size_t N = 0;        // number of trees
    std::size_t J = 8;        // basis order
    std::size_t k_min = 10;   // minimum child count
    double alpha_min = 0.05;  // minimum child fraction
    Box initial_parent;
    SplitDimLaw split_dim_law;
    SplitScheme scheme = SplitScheme::ThetaHeterogeneity;
    std::size_t n_grid = 32;
    std::uint64_t seed = 0;
    SolverOptions solver;
};

/// Checks the parameters against a sample of size n. 2*k_min > s is accepted:
/// it yields branches that never split.
inline void validate(const ForestConfig& cfg, std::size_t n, std::size_t d) {
    if (cfg.s < 2) throw ConfigError("subsample size s must be at least 2");
    if (cfg.s >= n) {
        throw ConfigError("subsample size s = " + std::to_string(cfg.s) + " must be below n = " + std::to_string(n));
    }
    if (cfg.N < 1) throw ConfigError("number of trees N must be positive");
    if (cfg.J < 1) throw ConfigError("basis order J must be positive");
    if (cfg.k_min < 1) throw ConfigError("k_min must be positive");
    if (!(cfg.alpha_min > 0.0 && cfg.alpha_min < 0.5)) throw ConfigError("alpha_min must lie in (0, 1/2)");
    if (cfg.n_grid < 1) throw ConfigError("n_grid must be positive");
    if (cfg.initial_parent.dim() != d) {
        throw ConfigError("initial parent has dimension " + std::to_string(cfg.initial_parent.dim()) +
                          ", data has " + std::to_string(d));
    }
    if (cfg.split_dim_law.kind == SplitDimLaw::Kind::Poisson && !(cfg.split_dim_law.lambda > 0.0)) {
        throw ConfigError("split dimension law needs a positive Poisson rate");
    }
}

// ---------------------------------------------------------------------------
// Subsampling

/// k distinct elements of pool, uniformly, returned sorted.
inline std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool, std::size_t k, Rng& rng) {
    if (k > pool.size()) throw ConfigError("cannot draw more elements than the pool holds");
    for (std::size_t i = 0; i < k; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
        std::swap(pool[i], pool[pick(rng)]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

inline std::vector<std::size_t> index_range(std::size_t n) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), std::size_t{0});
    return v;
}

/// N independent size-s subsets of {0..n-1}.
inline std::vector<std::vector<std::size_t>> draw_subsamples(std::size_t n, const ForestConfig& cfg, Rng& rng) {
    if (cfg.s >= n) {
        throw ConfigError("draw_subsamples: s = " + std::to_string(cfg.s) + " must be below n = " + std::to_string(n));
    }
    const auto all = index_range(n);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(cfg.N);
    for (std::size_t b = 0; b < cfg.N; ++b) out.push_back(sample_without_replacement(all, cfg.s, rng));
    return out;
}

struct Halves {
    std::vector<std::size_t> holdout;  // I_0, used only for leaf estimates
    std::vector<std::size_t> pool;     // floor(s/2) indices deciding splits
};

/// Uniform floor(s/2)-subset of the subsample decides splits; the rest is held out.
inline Halves split_half(std::span<const std::size_t> subsample, Rng& rng) {
    const std::size_t s = subsample.size();
    auto positions = sample_without_replacement(index_range(s), s / 2, rng);
    Halves h;
    std::vector<std::uint8_t> in_pool(s, 0);
    for (auto p : positions) in_pool[p] = 1;
    for (std::size_t m = 0; m < s; ++m) (in_pool[m] ? h.pool : h.holdout).push_back(subsample[m]);
    return h;
}

// ---------------------------------------------------------------------------
// Split criterion

/// Heterogeneity proxy sum_j [ (sum_C1 rho_j)^2/|C1| + (sum_C2 rho_j)^2/|C2| ].
inline double delta_tilde(const std::vector<Eigen::VectorXd>& child1, const std::vector<Eigen::VectorXd>& child2) {
    if (child1.empty() || child2.empty()) throw ConfigError("delta_tilde: both children must be nonempty");
    auto part = [](const std::vector<Eigen::VectorXd>& c) {
        Eigen::VectorXd sum = Eigen::VectorXd::Zero(c.front().size());
        for (const auto& r : c) sum += r;
        return sum.squaredNorm() / static_cast<double>(c.size());
    };
    return part(child1) + part(child2);
}

struct PseudoOutcomes {
    RowMatrix rho;             // one row per member
    bool theta_pivot = false;  // false when the mu pivot was used
};

/// Pseudo-outcomes of the members of a node under the configured scheme. The
/// theta scheme falls back to the mu pivot when the node's sample moments
/// cannot be matched.
inline PseudoOutcomes split_pseudo_outcomes(std::span<const std::size_t> members, const RowMatrix& phi,
                                            const ForestConfig& cfg, const BasisSpec& spec) {
    const auto J = phi.cols();
    const auto m = static_cast<Eigen::Index>(members.size());
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(J);
    for (auto i : members) mean += phi.row(static_cast<Eigen::Index>(i)).transpose();
    mean /= static_cast<double>(m);

    PseudoOutcomes out;
    out.rho.resize(m, J);
    for (Eigen::Index r = 0; r < m; ++r) {
        out.rho.row(r) = phi.row(static_cast<Eigen::Index>(members[static_cast<std::size_t>(r)])) - mean.transpose();
    }
    if (cfg.scheme == SplitScheme::ThetaHeterogeneity) {
        try {
            const auto sol = solve_theta(MomentVector{mean}, spec, cfg.solver);
            // rho_i = V^{-1}(phi_i - mu(theta)); mu(theta) matches mean to solver tolerance.
            const Eigen::MatrixXd centered = (out.rho.rowwise() + (mean - sol.mean).transpose()).transpose();
            out.rho = sol.cov_factor.solve(centered).transpose();
            out.theta_pivot = true;
        } catch (const NonConvergence&) {
        } catch (const BoundaryMoment&) {
        } catch (const NumericalError&) {
        }
    }
    return out;
}

/// n_grid equally spaced thresholds strictly between min and max of coords.
inline std::vector<double> threshold_grid(std::span<const double> coords, std::size_t n_grid) {
    if (coords.empty()) return {};
    const auto [lo_it, hi_it] = std::minmax_element(coords.begin(), coords.end());
    const double lo = *lo_it;
    const double hi = *hi_it;
    std::vector<double> grid;
    if (!(hi > lo)) return grid;
    for (std::size_t k = 1; k <= n_grid; ++k) {
        const double t = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(n_grid + 1);
        if (t > lo && t < hi && (grid.empty() || t > grid.back())) grid.push_back(t);
    }
    return grid;
}

struct Split {
    std::size_t dim = 0;
    double threshold = 0.0;
    double score = 0.0;
    std::size_t left_count = 0;   // members with x_dim <= threshold
    std::size_t right_count = 0;
};

/// Minimum child size allowed for a parent with `parent_count` members.
inline double min_child_size(const ForestConfig& cfg, std::size_t parent_count) {
    return std::max(cfg.alpha_min * static_cast<double>(parent_count), static_cast<double>(cfg.k_min));
}

/// Grid search for the axis-aligned split maximizing delta_tilde among dims in
/// allowed_dims, subject to both children holding at least
/// max(alpha_min |members|, k_min) members. Ties go to the lexicographically
/// smallest (dim, threshold). rho holds one row per member, in member order.
inline std::optional<Split> best_split(std::span<const std::size_t> members, const Dataset& data, const RowMatrix& rho,
                                       const ForestConfig& cfg, std::span<const std::size_t> allowed_dims) {
    const std::size_t m = members.size();
    if (m < 2) return std::nullopt;
    const double min_child = min_child_size(cfg, m);
    const auto J = rho.cols();
    const Eigen::RowVectorXd total = rho.colwise().sum();

    std::vector<std::size_t> dims(allowed_dims.begin(), allowed_dims.end());
    std::sort(dims.begin(), dims.end());
    dims.erase(std::unique(dims.begin(), dims.end()), dims.end());

    std::optional<Split> best;
    std::vector<double> coords(m);
    std::vector<std::size_t> order(m);
    Eigen::RowVectorXd left(J);
    for (auto dim : dims) {
        for (std::size_t r = 0; r < m; ++r) coords[r] = data.x(members[r], dim);
        const auto grid = threshold_grid(coords, cfg.n_grid);
        if (grid.empty()) continue;
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return coords[a] < coords[b]; });

        left.setZero();
        std::size_t n_left = 0;
        for (double t : grid) {
            while (n_left < m && coords[order[n_left]] <= t) {
                left += rho.row(static_cast<Eigen::Index>(order[n_left]));
                ++n_left;
            }
            const std::size_t n_right = m - n_left;
            if (static_cast<double>(n_left) < min_child || static_cast<double>(n_right) < min_child) continue;
            const double score = left.squaredNorm() / static_cast<double>(n_left) +
                                 (total - left).squaredNorm() / static_cast<double>(n_right);
            if (!best || score > best->score) best = Split{dim, t, score, n_left, n_right};
        }
    }
    return best;
}

// ---------------------------------------------------------------------------
// Branch growth

struct SplitRecord {
    std::size_t dim;
    double threshold;
    std::size_t parent_count;   // split-deciding members in the parent
    std::size_t kept_count;     // ... in the child containing x
    std::size_t other_count;    // ... in the discarded child
    bool theta_pivot;
    Box parent;
    Box child;
};

struct BranchResult {
    Box leaf_box;
    std::vector<std::size_t> holdout_members;  // I_0 members inside leaf_box, sorted
    std::vector<std::size_t> split_indices;    // every index ever passed to best_split, sorted
    std::vector<SplitRecord> splits;
};

inline void check_query(const ForestConfig& cfg, std::span<const double> x) {
    if (x.size() != cfg.initial_parent.dim()) throw ConfigError("query point has the wrong dimension");
    if (!cfg.initial_parent.contains(x)) throw ConfigError("query point lies outside the initial parent node");
}

/// Grows the branch containing x from an explicit holdout/split-pool partition.
inline BranchResult grow_branch_from_halves(std::span<const double> x, const Dataset& data, const RowMatrix& phi,
                                            const Halves& halves, const ForestConfig& cfg, const BasisSpec& spec,
                                            Rng& rng) {
    check_query(cfg, x);
    BranchResult out;
    Box node = cfg.initial_parent;

    std::vector<std::size_t> active;
    for (auto i : halves.pool) {
        if (node.contains(data.x(i))) active.push_back(i);
    }
    std::vector<std::size_t> seen;

    while (active.size() >= 2 * cfg.k_min) {
        const auto pivot = split_pseudo_outcomes(active, phi, cfg, spec);
        const auto dims = cfg.split_dim_law.draw(data.dim(), rng);
        seen.insert(seen.end(), active.begin(), active.end());
        const auto split = best_split(active, data, pivot.rho, cfg, dims);
        if (!split) break;

        const bool go_left = x[split->dim] <= split->threshold;
        Box child = node;
        if (go_left) {
            child.hi[split->dim] = split->threshold;
        } else {
            child.lo[split->dim] = split->threshold;
            child.lo_open[split->dim] = 1;
        }
        std::vector<std::size_t> kept;
        for (auto i : active) {
            if ((data.x(i, split->dim) <= split->threshold) == go_left) kept.push_back(i);
        }
        out.splits.push_back(SplitRecord{split->dim, split->threshold, active.size(), kept.size(),
                                         active.size() - kept.size(), pivot.theta_pivot, node, child});
        node = std::move(child);
        active = std::move(kept);
    }

    for (auto i : halves.holdout) {
        if (node.contains(data.x(i))) out.holdout_members.push_back(i);
    }
    std::sort(out.holdout_members.begin(), out.holdout_members.end());
    std::sort(seen.begin(), seen.end());
    seen.erase(std::unique(seen.begin(), seen.end()), seen.end());
    out.split_indices = std::move(seen);
    out.leaf_box = std::move(node);
    return out;
}

/// One honest branch: draws the holdout partition, then grows toward x.
inline BranchResult grow_branch(std::span<const double> x, const Dataset& data, const RowMatrix& phi,
                                std::span<const std::size_t> subsample, const ForestConfig& cfg,
                                const BasisSpec& spec, Rng& rng) {
    check_query(cfg, x);
    const auto halves = split_half(subsample, rng);
    return grow_branch_from_halves(x, data, phi, halves, cfg, spec, rng);
}

// ---------------------------------------------------------------------------
// Forest

inline constexpr std::uint64_t kSubsampleStream = 1;
inline constexpr std::uint64_t kTreeStream = 2;

/// Runs body(b) for b in [0, count) on `workers` threads. Exceptions are
/// rethrown on the caller; the lowest failing index wins.
template <class Body>
void parallel_for(std::size_t count, std::size_t workers, Body&& body) {
    workers = std::max<std::size_t>(1, std::min(workers, count));
    if (workers == 1) {
        for (std::size_t b = 0; b < count; ++b) body(b);
        return;
    }
    std::vector<std::exception_ptr> errors(count);
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&, w] {
            for (std::size_t b = w; b < count; b += workers) {
                try {
                    body(b);
                } catch (...) {
                    errors[b] = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

/// Holdout members of x's leaf for every tree, in tree order.
using LeafSets = std::vector<std::vector<std::size_t>>;

inline LeafSets grow_forest(std::span<const double> x, const Dataset& data, const ForestConfig& cfg,
                            const std::vector<std::vector<std::size_t>>& subsamples, std::size_t workers = 1) {
    validate(cfg, data.size(), data.dim());
    check_query(cfg, x);
    const BasisSpec spec(cfg.J);
    const RowMatrix phi = data.basis_values(spec);
    LeafSets leaves(subsamples.size());
    parallel_for(subsamples.size(), workers, [&](std::size_t b) {
        Rng rng = stream_rng(cfg.seed, kTreeStream, b);
        leaves[b] = grow_branch(x, data, phi, subsamples[b], cfg, spec, rng).holdout_members;
    });
    return leaves;
}

struct WeightVector {
    std::vector<double> weights;

    double sum() const { return std::accumulate(weights.begin(), weights.end(), 0.0); }
    std::size_t size() const noexcept { return weights.size(); }
};

/// omega_i = (1/N) sum_b 1[i in L_b] / |L_b|, with empty leaves contributing 0.
inline WeightVector weights_from_leaves(const LeafSets& leaves, std::size_t n) {
    WeightVector w{std::vector<double>(n, 0.0)};
    for (const auto& leaf : leaves) {
        if (leaf.empty()) continue;
        const double share = 1.0 / static_cast<double>(leaf.size());
        for (auto i : leaf) w.weights[i] += share;
    }
    const double inv_trees = 1.0 / static_cast<double>(leaves.size());
    for (auto& v : w.weights) v *= inv_trees;
    return w;
}

/// Similarity weights of every observation relative to x.
inline WeightVector weights(std::span<const double> x, const Dataset& data, const ForestConfig& cfg,
                            std::size_t workers = 1) {
    validate(cfg, data.size(), data.dim());
    Rng rng = stream_rng(cfg.seed, kSubsampleStream);
    const auto subsamples = draw_subsamples(data.size(), cfg, rng);
    return weights_from_leaves(grow_forest(x, data, cfg, subsamples, workers), data.size());
}

/// sum_i omega_i phi(Y_i).
inline MomentVector mu_hat(const WeightVector& w, const Dataset& data, const BasisSpec& spec) {
    if (w.size() != data.size()) throw ConfigError("mu_hat: weight vector length differs from the sample size");
    if (!(w.sum() > 0.0)) throw AllWeightsZero("mu_hat: every tree's leaf is empty");
    return weighted_basis_mean(w.weights, data.ys(), spec);
}

/// Per-tree leaf means of phi(Y) (N x J); zero rows for empty leaves.
inline Eigen::MatrixXd per_tree_means(const LeafSets& leaves, const RowMatrix& phi) {
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(leaves.size()), phi.cols());
    for (std::size_t b = 0; b < leaves.size(); ++b) {
        if (leaves[b].empty()) continue;
        for (auto i : leaves[b]) h.row(static_cast<Eigen::Index>(b)) += phi.row(static_cast<Eigen::Index>(i));
        h.row(static_cast<Eigen::Index>(b)) /= static_cast<double>(leaves[b].size());
    }
    return h;
}

// ---------------------------------------------------------------------------
// Standard-error subsample plan

struct SESubsamplePlan {
    std::vector<std::vector<std::size_t>> delete_groups;    // N_sigma sets of size D_sigma
    std::vector<std::vector<std::size_t>> tree_subsamples;  // N sets of size s

    std::size_t n_sigma() const noexcept { return delete_groups.size(); }
};

/// Trees 2l and 2l+1 (0-based) avoid delete group l; the remaining trees are
/// plain subsamples.
inline SESubsamplePlan se_subsample_plan(std::size_t n, const ForestConfig& cfg, std::size_t n_sigma,
                                         std::size_t d_sigma, Rng& rng) {
    if (cfg.s >= n) throw ConfigError("se_subsample_plan: s must be below n");
    if (d_sigma < 1 || d_sigma + cfg.s >= n) {
        throw ConfigError("se_subsample_plan: need 1 <= D_sigma < n - s (D_sigma = " + std::to_string(d_sigma) + ")");
    }
    if (n_sigma < 1 || 2 * n_sigma + 1 >= cfg.N) {
        throw ConfigError("se_subsample_plan: need 1 <= N_sigma < (N - 1)/2 (N_sigma = " + std::to_string(n_sigma) + ")");
    }
    const auto all = index_range(n);
    SESubsamplePlan plan;
    plan.delete_groups.reserve(n_sigma);
    plan.tree_subsamples.reserve(cfg.N);
    std::vector<std::uint8_t> deleted(n);
    for (std::size_t l = 0; l < n_sigma; ++l) {
        auto group = sample_without_replacement(all, d_sigma, rng);
        std::fill(deleted.begin(), deleted.end(), 0);
        for (auto i : group) deleted[i] = 1;
        std::vector<std::size_t> rest;
        rest.reserve(n - d_sigma);
        for (auto i : all) {
            if (!deleted[i]) rest.push_back(i);
        }
        plan.tree_subsamples.push_back(sample_without_replacement(rest, cfg.s, rng));
        plan.tree_subsamples.push_back(sample_without_replacement(rest, cfg.s, rng));
        plan.delete_groups.push_back(std::move(group));
    }
    for (std::size_t b = 2 * n_sigma; b < cfg.N; ++b) {
        plan.tree_subsamples.push_back(sample_without_replacement(all, cfg.s, rng));
    }
    return plan;
}

/// For each delete group, the indices of the trees whose subsample is disjoint from it.
inline std::vector<std::vector<std::size_t>> clean_trees(const SESubsamplePlan& plan, std::size_t n) {
    const std::size_t trees = plan.tree_subsamples.size();
    std::vector<std::uint8_t> member(trees * n, 0);
    for (std::size_t b = 0; b < trees; ++b) {
        for (auto i : plan.tree_subsamples[b]) member[b * n + i] = 1;
    }
    std::vector<std::vector<std::size_t>> out(plan.n_sigma());
    for (std::size_t l = 0; l < plan.n_sigma(); ++l) {
        const auto& group = plan.delete_groups[l];
        for (std::size_t b = 0; b < trees; ++b) {
            const std::uint8_t* row = member.data() + b * n;
            if (std::none_of(group.begin(), group.end(), [&](std::size_t i) { return row[i] != 0; })) {
                out[l].push_back(b);
            }
        }
    }
    return out;
}

/// Columns mu_{-l}: the average per-tree mean over the trees disjoint from
/// delete group l (J x N_sigma).
inline Eigen::MatrixXd delete_group_means(const SESubsamplePlan& plan, const Eigen::MatrixXd& per_tree_h,
                                          std::size_t n) {
    if (static_cast<std::size_t>(per_tree_h.rows()) != plan.tree_subsamples.size()) {
        throw ConfigError("sigma_fe: one per-tree mean is needed for every tree subsample");
    }
    const auto clean = clean_trees(plan, n);
    Eigen::MatrixXd means(per_tree_h.cols(), static_cast<Eigen::Index>(plan.n_sigma()));
    for (std::size_t l = 0; l < plan.n_sigma(); ++l) {
        if (clean[l].empty()) {
            throw NoCleanTrees("sigma_fe: no tree subsample avoids delete group " + std::to_string(l));
        }
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(per_tree_h.cols());
        for (auto b : clean[l]) acc += per_tree_h.row(static_cast<Eigen::Index>(b)).transpose();
        means.col(static_cast<Eigen::Index>(l)) = acc / static_cast<double>(clean[l].size());
    }
    return means;
}

/// sigma_fe from precomputed delete-group means.
inline double sigma_fe_from_means(const Eigen::MatrixXd& deleted_means, const Eigen::RowVectorXd& t_row,
                                  std::size_t n, std::size_t d_sigma) {
    if (d_sigma < 1 || d_sigma >= n) throw ConfigError("sigma_fe: D_sigma must lie in [1, n)");
    if (t_row.size() != deleted_means.rows()) throw ConfigError("sigma_fe: row vector has the wrong length");
    const auto n_sigma = static_cast<double>(deleted_means.cols());
    const Eigen::VectorXd average = deleted_means.rowwise().mean();
    double ss = 0.0;
    for (Eigen::Index l = 0; l < deleted_means.cols(); ++l) {
        const double dev = t_row.dot(deleted_means.col(l) - average);
        ss += dev * dev;
    }
    const double factor = static_cast<double>(n - d_sigma) / (static_cast<double>(d_sigma) * n_sigma);
    return std::sqrt(factor * ss);
}

/// Feasible delete-group standard error
///   sqrt( (n - D)/(D N_sigma) sum_l [ t (mu_{-l} - mu_av) ]^2 ),
/// where mu_{-l} averages the per-tree means of the trees disjoint from group l.
inline double sigma_fe(const SESubsamplePlan& plan, const Eigen::MatrixXd& per_tree_h, const Eigen::RowVectorXd& t_row,
                       std::size_t n, std::size_t d_sigma, std::size_t n_sigma) {
    if (n_sigma != plan.n_sigma()) throw ConfigError("sigma_fe: N_sigma does not match the plan");
    return sigma_fe_from_means(delete_group_means(plan, per_tree_h, n), t_row, n, d_sigma);
}

}  // namespace cdforest
