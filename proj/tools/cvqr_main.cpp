// cvqr: command-line front end for the control-variable quantile regression estimator.

#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "cvqr/config.hpp"
#include "cvqr/errors.hpp"
#include "cvqr/runner.hpp"

namespace {

using json = nlohmann::json;

// Flag overrides; an unset optional leaves the config value alone.
struct Overrides {
    std::string config_path;
    std::string metadata_path;
    std::optional<std::string> input, output_dir, design, dgp, weight_law;
    std::optional<std::uint64_t> seed;
    std::optional<int> T, S, replications, threads, M, seeds;
    std::optional<long> n;
    std::optional<double> epsilon, level, B;
    bool no_bands = false;
    bool no_gate = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    auto* cfg = cmd->add_option("--config", o.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--from-metadata", o.metadata_path, "rerun the configuration echoed in a metadata.json")
        ->check(CLI::ExistingFile)
        ->excludes(cfg);
    cmd->add_option("--output-dir,-o", o.output_dir, "directory for the outputs");
    cmd->add_option("--seed", o.seed, "seed for every random draw");
}

void add_estimation(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--input,-i", o.input, "dataset CSV with header y,x,z,z1");
    cmd->add_option("--epsilon", o.epsilon, "trimming of the quantile grids (default 0.01)");
    cmd->add_option("--T", o.T, "quantile grid size of both stages (default 599)");
    cmd->add_option("--S", o.S, "outcome mesh points (default 599)");
    cmd->add_option("--design", o.design, "instrument discretization: none, design1, design2");
    cmd->add_option("--M", o.M, "number of discretization bins");
    cmd->add_option("--B", o.B, "eigenvalue threshold of the identification sets (default 0.001)");
}

void add_bootstrap(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--replications", o.replications, "bootstrap replications (default 250)");
    cmd->add_option("--level", o.level, "band coverage level (default 0.9)");
    cmd->add_option("--threads", o.threads, "bootstrap worker threads; results do not depend on it");
    cmd->add_option("--weight-law", o.weight_law, "bootstrap weights: exponential or constant");
    cmd->add_flag("--no-bands", o.no_bands, "skip the bootstrap");
    cmd->add_flag("--no-gate", o.no_gate, "estimate even when the identification diagnostics fail");
}

void add_simulation(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--dgp", o.dgp, "synthetic design: linear-binary, linear-uniform, irrelevant-instrument, "
                                    "continuous-instrument, deterministic");
    cmd->add_option("--n", o.n, "sample size");
}

cvqr::RunConfig resolve(const Overrides& o) {
    cvqr::RunConfig base;
    if (!o.metadata_path.empty())
        base = cvqr::config_from_metadata(o.metadata_path);
    else if (!o.config_path.empty()) {
        base = cvqr::load_run_config(o.config_path);
        // a relative input in a config file is relative to that file
        namespace fs = std::filesystem;
        if (!base.input.empty() && fs::path(base.input).is_relative())
            base.input = (fs::path(o.config_path).parent_path() / base.input).string();
    }

    json j = cvqr::to_json(base);
    if (o.input) j["input"] = *o.input;
    if (o.output_dir) j["output_dir"] = *o.output_dir;
    if (o.seed) j["seed"] = *o.seed;
    if (o.epsilon) j["epsilon"] = *o.epsilon;
    if (o.T) j["T"] = *o.T;
    if (o.S) j["S"] = *o.S;
    if (o.replications) j["bootstrap"]["replications"] = *o.replications;
    if (o.level) j["bootstrap"]["level"] = *o.level;
    if (o.threads) j["bootstrap"]["threads"] = *o.threads;
    if (o.weight_law) j["bootstrap"]["weight_law"] = *o.weight_law;
    if (o.no_bands) j["bootstrap"]["enabled"] = false;
    if (o.design) j["discretization"]["design"] = *o.design;
    if (o.M) j["discretization"]["M"] = *o.M;
    if (o.B) j["identification"]["B"] = *o.B;
    if (o.no_gate) j["identification"]["gate"] = false;
    if (o.dgp) j["simulate"]["dgp"] = *o.dgp;
    if (o.n) j["simulate"]["n"] = *o.n;
    if (o.seeds) j["study"]["seeds"] = *o.seeds;

    auto config = cvqr::run_config_from_json(j);
    // metadata must name the data unambiguously
    if (!config.input.empty()) config.input = std::filesystem::absolute(config.input).lexically_normal().string();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Control-variable quantile regression: structural functions, identification diagnostics, "
                 "synthetic studies"};
    app.set_version_flag("--version", std::string("cvqr ") + cvqr::kVersion);
    app.require_subcommand(1);

    Overrides o;
    auto* estimate = app.add_subcommand("estimate", "DSF, QSF and ASF tables with uniform bands");
    add_common(estimate, o);
    add_estimation(estimate, o);
    add_bootstrap(estimate, o);

    auto* diagnose = app.add_subcommand("diagnose", "identification report for a dataset");
    add_common(diagnose, o);
    add_estimation(diagnose, o);

    auto* simulate = app.add_subcommand("simulate", "draw a synthetic dataset and its true structural functions");
    add_common(simulate, o);
    add_simulation(simulate, o);
    simulate->add_option("--S", o.S, "outcome mesh points used for the truth region");

    auto* study = app.add_subcommand("study", "QSF sensitivity to instrument discretization");
    add_common(study, o);
    add_simulation(study, o);
    study->add_option("--input,-i", o.input, "observed dataset instead of simulated samples");
    study->add_option("--T", o.T, "quantile grid size of both stages");
    study->add_option("--S", o.S, "outcome mesh points");
    study->add_option("--seeds", o.seeds, "number of simulated samples");

    std::string table, kind = "all", out_dir = ".";
    auto* plotdata = app.add_subcommand("plotdata", "long-format plot files from a structural table");
    plotdata->add_option("--table", table, "table written by estimate or simulate")->required()->check(
        CLI::ExistingFile);
    plotdata->add_option("--kind", kind, "dsf, qsf, asf or all");
    plotdata->add_option("--out", out_dir, "output directory");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const std::vector<std::string> command(argv, argv + argc);
    try {
        if (plotdata->parsed()) {
            cvqr::run_plotdata(table, kind, out_dir, std::cerr);
            return 0;
        }
        const auto config = resolve(o);
        if (estimate->parsed()) cvqr::run_estimate(config, std::cerr, command);
        if (diagnose->parsed()) cvqr::run_diagnose(config, std::cout, command);
        if (simulate->parsed()) cvqr::run_simulate(config, std::cerr, command);
        if (study->parsed()) cvqr::run_study(config, std::cerr, command);
        return 0;
    } catch (const cvqr::Error& e) {
        std::cerr << "cvqr: error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const json::exception& e) {
        std::cerr << "cvqr: configuration error: " << e.what() << "\n";
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "cvqr: error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "cvqr: internal error: " << e.what() << "\n";
        return 4;
    }
}
