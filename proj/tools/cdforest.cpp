// Command-line front end: `cdforest fit` estimates f(y|x) on a CSV dataset,
// `cdforest mc` runs the simulation designs.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <Eigen/Core>
#include <boost/version.hpp>

#include "cdforest/estimator.hpp"
#include "cdforest/io.hpp"
#include "cdforest/simbench.hpp"

namespace fs = std::filesystem;
using namespace cdforest;

namespace {

struct Overrides {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
    std::optional<std::string> out;
};

// Exit status for a library error: 1 for bad input or configuration, 2 for
// failures of the estimation itself.
int status_for(const std::exception& e) {
    if (dynamic_cast<const InputError*>(&e) || dynamic_cast<const ConfigError*>(&e) ||
        dynamic_cast<const DomainError*>(&e)) {
        return 1;
    }
    if (dynamic_cast<const Error*>(&e)) return 2;
    return 1;
}

class Stage {
public:
    explicit Stage(std::string command) : command_(std::move(command)) {}
    void operator()(std::string name) { name_ = std::move(name); }
    int fail(const std::exception& e) const {
        std::cerr << "cdforest " << command_ << ": " << name_ << " failed: " << e.what() << "\n";
        return status_for(e);
    }

private:
    std::string command_;
    std::string name_ = "startup";
};

io::RunConfig load(const Overrides& ov, const std::string& command) {
    io::json j = ov.config.empty() ? io::json::object() : io::read_json_file(ov.config);
    auto rc = io::parse_config(j, command);
    if (ov.seed) rc.forest.seed = *ov.seed;
    if (ov.workers) rc.workers = *ov.workers;
    if (ov.out) rc.out = *ov.out;
    if (rc.workers == 0) throw ConfigError("workers must be positive");
    return rc;
}

io::json provenance(const io::RunConfig& rc) {
    io::json p;
    p["version"] = io::kVersion;
    p["command"] = rc.command;
    p["seed"] = rc.forest.seed;
    p["config"] = io::to_json(rc);
    p["libraries"] = {{"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                                    std::to_string(EIGEN_MINOR_VERSION)},
                      {"boost", BOOST_LIB_VERSION}};
    return p;
}

void prepare_out(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw InputError("cannot create output directory '" + dir + "': " + ec.message());
}

int cmd_fit(const Overrides& ov) {
    Stage stage("fit");
    try {
        stage("reading configuration");
        auto rc = load(ov, "fit");
        if (rc.input.empty()) throw ConfigError("no input file given (set \"input\" in the configuration)");
        stage("reading input '" + rc.input + "'");
        const Dataset data = io::read_dataset_csv(rc.input);
        stage("resolving configuration");
        io::resolve_fit_defaults(rc, data);
        for (double y : rc.y_grid) {
            if (!(y >= 0.0 && y <= 1.0)) throw ConfigError("y_grid value " + io::fmt(y) + " is outside [0,1]");
        }

        stage("fitting");
        FitOptions fo;
        fo.workers = rc.workers;
        if (rc.se_enabled) fo.se = rc.se;
        const auto f = fit(data, rc.query_x, rc.forest, fo);

        stage("evaluating density and standard errors");
        const double z = normal_quantile(1.0 - (1.0 - rc.level) / 2.0);
        std::vector<io::FitRow> rows;
        for (double y : rc.y_grid) {
            io::FitRow r{y, pdf(f, y), std::nan(""), std::nan(""), std::nan("")};
            if (rc.se_enabled) {
                r.se = std_error(f, y);
                r.ci_lo = r.density - z * r.se;
                r.ci_hi = r.density + z * r.se;
            }
            rows.push_back(r);
        }

        stage("writing output");
        prepare_out(rc.out);
        io::write_text((fs::path(rc.out) / "fit.csv").string(), io::fit_csv(rc, rows));
        io::write_text((fs::path(rc.out) / "provenance.json").string(), provenance(rc).dump(2) + "\n");
        return 0;
    } catch (const std::exception& e) {
        return stage.fail(e);
    }
}

int cmd_mc(const Overrides& ov) {
    Stage stage("mc");
    try {
        stage("reading configuration");
        auto rc = load(ov, "mc");
        io::resolve_mc_defaults(rc);

        sim::MCOptions mo;
        mo.n = rc.n;
        mo.reps = rc.reps;
        mo.forest = rc.forest;
        mo.with_se = rc.se_enabled;
        mo.se = rc.se;
        mo.design_points = rc.design_points;
        mo.level = rc.level;
        mo.mise_grid = rc.mise_grid;
        mo.with_kernel = rc.with_kernel;
        mo.covariate_sd = rc.covariate_sd;
        mo.workers = rc.workers;
        mo.seed = rc.forest.seed;

        stage("running replications");
        const auto report = sim::run_mc(sim::parse_design(rc.design), mo);
        std::cerr << "cdforest mc: " << report.reps_ok << "/" << report.reps_requested << " replications in "
                  << report.runtime_seconds << " s\n";
        for (const auto& f : report.failures) std::cerr << "  " << f << "\n";

        stage("writing output");
        prepare_out(rc.out);
        io::write_text((fs::path(rc.out) / "mc.csv").string(), io::mc_csv(rc, report));
        io::write_text((fs::path(rc.out) / "mc.json").string(), io::mc_json(rc, report).dump(2) + "\n");
        io::write_text((fs::path(rc.out) / "provenance.json").string(), provenance(rc).dump(2) + "\n");
        return 0;
    } catch (const std::exception& e) {
        return stage.fail(e);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Forest-weighted exponential-series conditional density estimation"};
    app.require_subcommand(1);
    Overrides ov;

    auto add_flags = [&](CLI::App* sub) {
        sub->add_option("--config", ov.config, "JSON configuration file");
        sub->add_option("--seed", ov.seed, "random seed (overrides the configuration)");
        sub->add_option("--workers", ov.workers, "worker threads (overrides the configuration)");
        sub->add_option("--out", ov.out, "output directory (overrides the configuration)");
    };
    auto* fit_cmd = app.add_subcommand("fit", "estimate f(y|x) on a CSV dataset");
    auto* mc_cmd = app.add_subcommand("mc", "run a Monte Carlo design");
    add_flags(fit_cmd);
    add_flags(mc_cmd);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    if (fit_cmd->parsed()) return cmd_fit(ov);
    return cmd_mc(ov);
}
