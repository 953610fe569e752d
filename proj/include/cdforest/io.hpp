#pragma once

// JSON run configuration, CSV data input and the CSV/JSON writers used by the
// command-line tool.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "cdforest/errors.hpp"
#include "cdforest/estimator.hpp"
#include "cdforest/forest.hpp"
#include "cdforest/simbench.hpp"

namespace cdforest::io {

using nlohmann::json;

inline constexpr const char* kVersion = "cdforest 0.1.0";

/// Shortest-round-trip-free fixed formatting used in every output file.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.10g", v);
    return buf;
}

// ---------------------------------------------------------------------------
// CSV input

inline double parse_number(std::string_view field, std::size_t row, std::size_t col) {
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) field.remove_suffix(1);
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc() || ptr != field.data() + field.size() || field.empty()) {
        throw InputError("row " + std::to_string(row) + ", column " + std::to_string(col) + ": cannot parse '" +
                         std::string(field) + "' as a number");
    }
    return v;
}

/// Reads a CSV with a header row: first column y in [0,1], remaining columns
/// covariates. Rows are numbered from 1 after the header.
inline Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open input file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw InputError("input file '" + path + "' is empty");
    const std::size_t cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (cols < 2) throw InputError("input file '" + path + "' needs an outcome column and at least one covariate");
    std::vector<double> y;
    std::vector<double> x;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++row;
        std::vector<std::string_view> fields;
        std::string_view rest(line);
        for (;;) {
            const auto comma = rest.find(',');
            fields.push_back(rest.substr(0, comma));
            if (comma == std::string_view::npos) break;
            rest.remove_prefix(comma + 1);
        }
        if (fields.size() != cols) {
            throw InputError("row " + std::to_string(row) + ": expected " + std::to_string(cols) + " fields, found " +
                             std::to_string(fields.size()));
        }
        const double yv = parse_number(fields[0], row, 1);
        if (!(yv >= 0.0 && yv <= 1.0)) {
            throw InputError("row " + std::to_string(row) + ": outcome " + fmt(yv) + " is outside [0,1]");
        }
        y.push_back(yv);
        for (std::size_t c = 1; c < cols; ++c) x.push_back(parse_number(fields[c], row, c + 1));
    }
    if (y.empty()) throw InputError("input file '" + path + "' has no data rows");
    return Dataset(std::move(y), std::move(x), cols - 1);
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
    std::string command;  // "fit" or "mc"
    ForestConfig forest;
    bool s_set = false;
    bool parent_set = false;
    std::size_t workers = 1;
    std::string out = "out";
    // standard errors
    bool se_enabled = true;
    std::optional<SEParams> se;
    double level = 0.95;
    // fit
    std::string input;
    std::vector<double> query_x;
    std::vector<double> y_grid;
    // mc
    std::string design = "D1";
    std::size_t n = 1000;
    std::size_t reps = 100;
    std::vector<double> design_points = sim::default_design_points();
    std::size_t mise_grid = 141;
    bool with_kernel = false;
    double covariate_sd = sim::kCovariateSd;
};

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        if (!allowed.count(it.key())) throw ConfigError("unknown key '" + it.key() + "' in " + where);
    }
}

template <class T>
T get(const json& j, const char* key, const std::string& where) {
    try {
        return j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "' in " + where + ": " + e.what());
    }
}

inline std::string scheme_name(SplitScheme s) { return s == SplitScheme::ThetaHeterogeneity ? "theta" : "mu"; }

}  // namespace detail

/// Parses a configuration document. Unknown keys are rejected.
inline RunConfig parse_config(const json& j, const std::string& command) {
    using detail::get;
    if (!j.is_object()) throw ConfigError("configuration must be a JSON object");
    const std::set<std::string> common = {"command", "s", "N", "J", "k_min", "alpha_min", "n_grid", "scheme",
                                          "split_dim_law", "initial_parent", "seed", "workers", "out", "se",
                                          "level", "solver"};
    std::set<std::string> allowed = common;
    if (command == "fit") {
        allowed.insert({"input", "query_x", "y_grid"});
    } else if (command == "mc") {
        allowed.insert({"design", "n", "reps", "design_points", "mise_grid", "with_kernel", "covariate_sd"});
    } else {
        throw ConfigError("unknown command '" + command + "'");
    }
    detail::reject_unknown(j, allowed, "configuration");
    if (j.contains("command") && get<std::string>(j, "command", "configuration") != command) {
        throw ConfigError("configuration was written for command '" + j.at("command").get<std::string>() + "'");
    }

    RunConfig rc;
    rc.command = command;
    auto& f = rc.forest;
    f.N = 2240;
    const std::string where = "configuration";
    if (j.contains("s")) {
        f.s = get<std::size_t>(j, "s", where);
        rc.s_set = true;
    }
    if (j.contains("N")) f.N = get<std::size_t>(j, "N", where);
    if (j.contains("J")) f.J = get<std::size_t>(j, "J", where);
    if (j.contains("k_min")) f.k_min = get<std::size_t>(j, "k_min", where);
    if (j.contains("alpha_min")) f.alpha_min = get<double>(j, "alpha_min", where);
    if (j.contains("n_grid")) f.n_grid = get<std::size_t>(j, "n_grid", where);
    if (j.contains("seed")) f.seed = get<std::uint64_t>(j, "seed", where);
    if (j.contains("workers")) rc.workers = get<std::size_t>(j, "workers", where);
    if (j.contains("out")) rc.out = get<std::string>(j, "out", where);
    if (j.contains("level")) rc.level = get<double>(j, "level", where);
    if (j.contains("scheme")) {
        const auto s = get<std::string>(j, "scheme", where);
        if (s == "theta") f.scheme = SplitScheme::ThetaHeterogeneity;
        else if (s == "mu") f.scheme = SplitScheme::MuHeterogeneity;
        else throw ConfigError("scheme must be 'theta' or 'mu'");
    }
    if (j.contains("split_dim_law")) {
        const auto& law = j.at("split_dim_law");
        detail::reject_unknown(law, {"kind", "lambda"}, "split_dim_law");
        const auto kind = get<std::string>(law, "kind", "split_dim_law");
        if (kind == "poisson") {
            f.split_dim_law.kind = SplitDimLaw::Kind::Poisson;
            if (law.contains("lambda")) f.split_dim_law.lambda = get<double>(law, "lambda", "split_dim_law");
        } else if (kind == "singleton") {
            f.split_dim_law.kind = SplitDimLaw::Kind::Singleton;
        } else {
            throw ConfigError("split_dim_law.kind must be 'poisson' or 'singleton'");
        }
    }
    if (j.contains("initial_parent")) {
        const auto& p = j.at("initial_parent");
        detail::reject_unknown(p, {"lo", "hi"}, "initial_parent");
        f.initial_parent = Box(get<std::vector<double>>(p, "lo", "initial_parent"),
                               get<std::vector<double>>(p, "hi", "initial_parent"));
        rc.parent_set = true;
    }
    if (j.contains("solver")) {
        const auto& s = j.at("solver");
        detail::reject_unknown(s, {"tol", "max_iter", "box_bound"}, "solver");
        if (s.contains("tol")) f.solver.tol = get<double>(s, "tol", "solver");
        if (s.contains("max_iter")) f.solver.max_iter = get<std::size_t>(s, "max_iter", "solver");
        if (s.contains("box_bound")) f.solver.box_bound = get<double>(s, "box_bound", "solver");
    }
    if (j.contains("se")) {
        const auto& s = j.at("se");
        if (s.is_boolean()) {
            rc.se_enabled = s.get<bool>();
        } else if (s.is_object()) {
            detail::reject_unknown(s, {"N_sigma", "D_sigma"}, "se");
            rc.se = SEParams{get<std::size_t>(s, "N_sigma", "se"), get<std::size_t>(s, "D_sigma", "se")};
        } else {
            throw ConfigError("se must be a boolean or an object with N_sigma and D_sigma");
        }
    }
    if (command == "fit") {
        if (j.contains("input")) rc.input = get<std::string>(j, "input", where);
        if (j.contains("query_x")) rc.query_x = get<std::vector<double>>(j, "query_x", where);
        if (j.contains("y_grid")) {
            const auto& g = j.at("y_grid");
            if (g.is_array()) {
                rc.y_grid = g.get<std::vector<double>>();
            } else if (g.is_object()) {
                detail::reject_unknown(g, {"from", "to", "points"}, "y_grid");
                rc.y_grid = sim::uniform_grid(get<double>(g, "from", "y_grid"), get<double>(g, "to", "y_grid"),
                                              get<std::size_t>(g, "points", "y_grid"));
            } else {
                throw ConfigError("y_grid must be an array or {from, to, points}");
            }
        }
    } else {
        if (!rc.parent_set) rc.forest.initial_parent = Box::cube(sim::kCovariates, 0.25, 0.75);
        rc.parent_set = true;
        if (j.contains("design")) rc.design = get<std::string>(j, "design", where);
        sim::parse_design(rc.design);
        if (j.contains("n")) rc.n = get<std::size_t>(j, "n", where);
        if (j.contains("reps")) rc.reps = get<std::size_t>(j, "reps", where);
        if (j.contains("design_points")) rc.design_points = get<std::vector<double>>(j, "design_points", where);
        if (j.contains("mise_grid")) rc.mise_grid = get<std::size_t>(j, "mise_grid", where);
        if (j.contains("with_kernel")) rc.with_kernel = get<bool>(j, "with_kernel", where);
        if (j.contains("covariate_sd")) rc.covariate_sd = get<double>(j, "covariate_sd", where);
        if (!(rc.covariate_sd > 0.0)) throw ConfigError("covariate_sd must be positive");
        if (!rc.s_set) rc.forest.s = rc.n / 5;
    }
    if (!(rc.level > 0.0 && rc.level < 1.0)) throw ConfigError("level must lie in (0,1)");
    return rc;
}

inline json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open configuration file '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw InputError("configuration file '" + path + "' is not valid JSON: " + e.what());
    }
}

/// Bounding box of the covariates shrunk by 1% of its width on every side.
inline Box shrunk_bounding_box(const Dataset& data) {
    std::vector<double> lo(data.dim(), std::numeric_limits<double>::infinity());
    std::vector<double> hi(data.dim(), -std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t m = 0; m < data.dim(); ++m) {
            lo[m] = std::min(lo[m], data.x(i, m));
            hi[m] = std::max(hi[m], data.x(i, m));
        }
    }
    for (std::size_t m = 0; m < data.dim(); ++m) {
        const double pad = 0.01 * (hi[m] - lo[m]);
        lo[m] += pad;
        hi[m] -= pad;
    }
    return Box(std::move(lo), std::move(hi));
}

/// Fills data-dependent defaults for the fit command: s = n/5, the initial
/// parent, the query point (centre of the parent), the y grid and the
/// standard-error parameters.
inline void resolve_fit_defaults(RunConfig& rc, const Dataset& data) {
    if (!rc.s_set) rc.forest.s = std::max<std::size_t>(2, data.size() / 5);
    if (!rc.parent_set) rc.forest.initial_parent = shrunk_bounding_box(data);
    if (rc.query_x.empty()) {
        for (std::size_t m = 0; m < data.dim(); ++m) {
            rc.query_x.push_back(0.5 * (rc.forest.initial_parent.lo[m] + rc.forest.initial_parent.hi[m]));
        }
    }
    if (rc.y_grid.empty()) rc.y_grid = sim::uniform_grid(0.0, 1.0, 21);
    if (rc.se_enabled && !rc.se) rc.se = default_se_params(data.size(), rc.forest);
    rc.s_set = rc.parent_set = true;
}

inline void resolve_mc_defaults(RunConfig& rc) {
    if (rc.se_enabled && !rc.se) rc.se = default_se_params(rc.n, rc.forest);
}

/// Fully resolved configuration; feeding it back through parse_config
/// reproduces the run.
inline json to_json(const RunConfig& rc) {
    const auto& f = rc.forest;
    json j;
    j["command"] = rc.command;
    j["s"] = f.s;
    j["N"] = f.N;
    j["J"] = f.J;
    j["k_min"] = f.k_min;
    j["alpha_min"] = f.alpha_min;
    j["n_grid"] = f.n_grid;
    j["scheme"] = detail::scheme_name(f.scheme);
    if (f.split_dim_law.kind == SplitDimLaw::Kind::Poisson) {
        j["split_dim_law"] = {{"kind", "poisson"}, {"lambda", f.split_dim_law.lambda}};
    } else {
        j["split_dim_law"] = {{"kind", "singleton"}};
    }
    j["initial_parent"] = {{"lo", f.initial_parent.lo}, {"hi", f.initial_parent.hi}};
    j["seed"] = f.seed;
    j["workers"] = rc.workers;
    j["out"] = rc.out;
    j["solver"] = {{"tol", f.solver.tol}, {"max_iter", f.solver.max_iter}, {"box_bound", f.solver.box_bound}};
    if (rc.se_enabled && rc.se) {
        j["se"] = {{"N_sigma", rc.se->n_sigma}, {"D_sigma", rc.se->d_sigma}};
    } else {
        j["se"] = false;
    }
    j["level"] = rc.level;
    if (rc.command == "fit") {
        j["input"] = rc.input;
        j["query_x"] = rc.query_x;
        j["y_grid"] = rc.y_grid;
    } else {
        j["design"] = rc.design;
        j["n"] = rc.n;
        j["reps"] = rc.reps;
        j["design_points"] = rc.design_points;
        j["mise_grid"] = rc.mise_grid;
        j["with_kernel"] = rc.with_kernel;
        j["covariate_sd"] = rc.covariate_sd;
    }
    return j;
}

/// Configuration fields that do not influence results are dropped from the
/// copy embedded in output files, so outputs do not depend on them.
inline json embedded_config(const RunConfig& rc) {
    json j = to_json(rc);
    j.erase("workers");
    j.erase("out");
    return j;
}

// ---------------------------------------------------------------------------
// Writers

struct FitRow {
    double y;
    double density;
    double se;
    double ci_lo;
    double ci_hi;
};

inline std::string fit_csv(const RunConfig& rc, const std::vector<FitRow>& rows) {
    std::ostringstream os;
    os << "# " << kVersion << " config: " << embedded_config(rc).dump() << "\n";
    os << "y,density,se,ci_lo,ci_hi\n";
    for (const auto& r : rows) {
        os << fmt(r.y) << ',' << fmt(r.density) << ',' << fmt(r.se) << ',' << fmt(r.ci_lo) << ',' << fmt(r.ci_hi)
           << "\n";
    }
    return os.str();
}

/// One row per design point, then a MISE row whose value sits in the bias column.
inline std::string mc_csv(const RunConfig& rc, const sim::MCReport& rep) {
    std::ostringstream os;
    os << "# " << kVersion << " config: " << embedded_config(rc).dump() << "\n";
    os << "y,truth,bias,sd,avg_se,coverage\n";
    for (const auto& p : rep.points) {
        os << fmt(p.y) << ',' << fmt(p.truth) << ',' << fmt(p.bias) << ',' << fmt(p.sd) << ',' << fmt(p.avg_se) << ','
           << fmt(p.coverage) << "\n";
    }
    os << "MISE,NA," << fmt(rep.mise) << ",NA,NA,NA\n";
    return os.str();
}

inline json mc_json(const RunConfig& rc, const sim::MCReport& rep) {
    json j;
    j["version"] = kVersion;
    j["config"] = embedded_config(rc);
    j["design"] = sim::design_name(rep.design);
    j["n"] = rep.n;
    j["reps_requested"] = rep.reps_requested;
    j["reps_ok"] = rep.reps_ok;
    j["failures"] = rep.failures;
    j["mise"] = rep.mise;
    json pts = json::array();
    for (const auto& p : rep.points) {
        json q = {{"y", p.y}, {"truth", p.truth}, {"bias", p.bias}, {"sd", p.sd}, {"avg_se", p.avg_se},
                  {"coverage", p.coverage}};
        if (rc.with_kernel) {
            q["kernel_bias"] = p.kernel_bias;
            q["kernel_sd"] = p.kernel_sd;
        }
        pts.push_back(q);
    }
    j["points"] = pts;
    if (rc.with_kernel) {
        j["kernel_mise"] = rep.kernel_mise;
        j["kernel_reps_ok"] = rep.kernel_reps_ok;
    }
    return j;
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write output file '" + path + "'");
    out << text;
    if (!out) throw InputError("failed writing output file '" + path + "'");
}

}  // namespace cdforest::io
