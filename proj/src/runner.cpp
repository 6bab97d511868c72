#include "cvqr/runner.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "cvqr/bootstrap.hpp"
#include "cvqr/errors.hpp"
#include "cvqr/first_stage.hpp"
#include "cvqr/identification.hpp"
#include "cvqr/pipeline.hpp"
#include "cvqr/second_stage.hpp"
#include "cvqr/tables.hpp"

namespace cvqr {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
    return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string prepare_output_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw InvalidInputError("cannot create output directory '" + dir + "': " + ec.message());
    return dir;
}

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string upper(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return s;
}

std::string join(const std::string& dir, const std::string& name) { return (fs::path(dir) / name).string(); }

std::string index_meaning(StructuralKind kind) {
    switch (kind) {
        case StructuralKind::DSF: return "y (outcome level; value is Pr(Y* <= y) at x)";
        case StructuralKind::QSF: return "p (quantile level; value is the p-quantile of Y* at x)";
        case StructuralKind::ASF: return "empty (value is E[Y*] at x)";
    }
    return "";
}

// Metadata assembled over the run and written once at the end, also on failure.
struct Metadata {
    json j;

    Metadata(const std::string& subcommand, const RunConfig& config, const std::vector<std::string>& command) {
        j["tool"] = "cvqr";
        j["subcommand"] = subcommand;
        j["command"] = command;
        j["seed"] = config.seed;
        j["versions"] = {{"cvqr", kVersion},
                         {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) +
                                       "." + std::to_string(EIGEN_MINOR_VERSION)},
                         {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                               std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
#ifdef __VERSION__
                         {"compiler", __VERSION__}
#else
                         {"compiler", "unknown"}
#endif
        };
        j["config"] = to_json(config);
        j["status"] = "running";
        j["outputs"] = json::array();
    }

    void write(const std::string& dir) const { write_file_atomically(join(dir, "metadata.json"), j.dump(2) + "\n"); }
};

// Runs `body`, then writes metadata with the outcome; failures are rethrown.
template <typename Body>
std::vector<std::string> with_metadata(const std::string& dir, Metadata& meta, Body&& body) {
    const auto start = Clock::now();
    std::vector<std::string> outputs;
    try {
        body(outputs);
        meta.j["status"] = "ok";
        meta.j["exit_code"] = 0;
    } catch (const Error& e) {
        meta.j["status"] = "error";
        meta.j["exit_code"] = e.exit_code();
        meta.j["error"] = e.what();
        meta.j["outputs"] = outputs;
        meta.j["timing_seconds"]["total"] = seconds_since(start);
        try {
            meta.write(dir);
        } catch (const Error&) {
            // the original failure matters more
        }
        throw;
    }
    meta.j["timing_seconds"]["total"] = seconds_since(start);
    outputs.push_back(join(dir, "metadata.json"));
    meta.j["outputs"] = outputs;
    meta.write(dir);
    return outputs;
}

std::string diagnostics_csv(const IdentificationReport& report) {
    std::ostringstream out;
    out << "profile,cell,z1,lo,hi,count,probability,lambda_min,propensity,usable,pass\n";
    auto profile_rows = [&](const std::string& name, const ConditionalEigenProfile& profile) {
        for (std::size_t c = 0; c < profile.cells.size(); ++c) {
            const auto& cell = profile.cells[c];
            out << name << ',' << c << ',';
            if (cell.stratified) out << format_number(cell.z1);
            out << ',' << format_number(cell.lo) << ',' << format_number(cell.hi) << ',' << cell.count << ','
                << format_number(cell.probability) << ',' << format_number(cell.min_eigenvalue) << ",,"
                << (cell.usable ? 1 : 0) << ',' << (cell.in_set ? 1 : 0) << "\n";
        }
    };
    profile_rows("triangular_x", report.triangular.x_profile);
    profile_rows("triangular_v", report.triangular.v_profile);
    profile_rows("x", report.x_profile);
    profile_rows("v", report.v_profile);
    if (report.propensity) {
        const auto& cells = report.propensity->cells;
        for (std::size_t c = 0; c < cells.size(); ++c)
            out << "propensity," << c << ",," << format_number(cells[c].lo) << ',' << format_number(cells[c].hi)
                << ',' << cells[c].count << ',' << format_number(cells[c].probability) << ",,"
                << format_number(cells[c].propensity) << ",1," << (cells[c].pass ? 1 : 0) << "\n";
    }
    for (std::size_t c = 0; c < report.instrument.size(); ++c) {
        const auto& cell = report.instrument[c];
        out << "instrument," << c << ",," << format_number(cell.value) << ',' << format_number(cell.value) << ','
            << cell.count << ',' << format_number(cell.share) << ",,,1," << (cell.thin ? 0 : 1) << "\n";
    }
    return out.str();
}

std::string rank_failure_text(const RunConfig& config, const Dataset& data, const RankDeficiencyError& e) {
    const auto& basis = config.pipeline.basis;
    auto moments = moment_matrix(first_stage_design(basis, data));
    moments.names = basis.first_stage_names();
    std::ostringstream out;
    out << "input: " << config.input << "\n";
    out << "n: " << data.n() << "\n\n";
    out << "first stage failed: " << e.what() << "\n";
    out << "first-stage moment matrix E[(s(Z) x r(Z1))(s(Z) x r(Z1))']:\n";
    out << "  terms:";
    for (const auto& name : moments.names) out << ' ' << name;
    out << "\n  eigenvalues:";
    for (Eigen::Index k = 0; k < moments.eigenvalues.size(); ++k) out << ' ' << moments.eigenvalues(k);
    out << "\n  rank flag: " << (moments.rank_ok ? "pass" : "FAIL") << " (threshold " << moments.threshold << ")\n";
    if (!e.column_names().empty()) {
        out << "  dependent columns:";
        for (const auto& name : e.column_names()) out << ' ' << name;
        out << "\n";
    }
    out << "identified: no\n";
    return out.str();
}

struct DiagnosedFit {
    Dataset data;
    FirstStageFit first_stage;
    Eigen::VectorXd v_hat;
    IdentificationReport report;
};

// Shared by estimate and diagnose: data, first stage, report files.
DiagnosedFit diagnose_stage(const RunConfig& config, const std::string& dir, std::vector<std::string>& outputs,
                            std::ostream& log) {
    DiagnosedFit fit;
    fit.data = load_input(config);
    log << "read " << fit.data.n() << " observations from " << config.input << "\n";
    const auto& spec = config.pipeline;
    try {
        fit.first_stage = fit_first_stage(fit.data, spec.basis, spec.epsilon, spec.grid_size, {}, spec.solver);
    } catch (const RankDeficiencyError& e) {
        const auto path = join(dir, "diagnostics.txt");
        write_file_atomically(path, rank_failure_text(config, fit.data, e));
        outputs.push_back(path);
        throw;
    }
    fit.v_hat = control_values(fit.first_stage, fit.data);
    fit.report = diagnose(fit.first_stage, fit.data, fit.v_hat, spec.basis, config.identification);

    std::ostringstream text;
    text << "input: " << config.input << "\n";
    text << "n: " << fit.data.n() << "\n";
    text << "discretization: " << to_string(config.discretization.design);
    if (config.discretization.design != DiscretizationSpec::Design::None) text << " M=" << config.discretization.bins;
    text << "\n\n" << fit.report.summary();
    const auto txt = join(dir, "diagnostics.txt");
    const auto csv = join(dir, "diagnostics.csv");
    write_file_atomically(txt, text.str());
    write_file_atomically(csv, diagnostics_csv(fit.report));
    outputs.push_back(txt);
    outputs.push_back(csv);
    for (const auto& cell : fit.report.instrument)
        if (cell.thin)
            log << "warning: thin instrument cell z=" << cell.value << " holds " << std::setprecision(3)
                << 100.0 * cell.share << "% of the observations\n";
    return fit;
}

Eigen::MatrixXd true_table(const GroundTruth& truth, StructuralKind kind, const Eigen::VectorXd& x_grid,
                           const Eigen::VectorXd& index) {
    const Eigen::Index cols = kind == StructuralKind::ASF ? 1 : index.size();
    Eigen::MatrixXd out(x_grid.size(), cols);
    for (Eigen::Index i = 0; i < x_grid.size(); ++i)
        for (Eigen::Index c = 0; c < cols; ++c) {
            switch (kind) {
                case StructuralKind::DSF: out(i, c) = truth.dsf(index(c), x_grid(i)); break;
                case StructuralKind::QSF: out(i, c) = truth.qsf(index(c), x_grid(i)); break;
                case StructuralKind::ASF: out(i, c) = truth.asf(x_grid(i)); break;
            }
        }
    return out;
}

StructuralFunctionEstimate truth_estimate(const GroundTruth& truth, const StructuralFunctionEstimate& like) {
    StructuralFunctionEstimate e;
    e.kind = like.kind;
    e.x_grid = like.x_grid;
    e.index_grid = like.index_grid;
    e.values = true_table(truth, like.kind, like.x_grid, like.index_grid);
    return e;
}

double sup_abs(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) { return (a - b).cwiseAbs().maxCoeff(); }

double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const auto m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

std::string study_csv(const std::vector<StudyRow>& rows) {
    std::ostringstream out;
    out << "seed,design,M,sup_deviation,truth_error,status\n";
    for (const auto& r : rows) {
        out << r.seed << ',' << r.design << ',';
        if (r.bins > 0) out << r.bins;
        out << ',';
        if (!std::isnan(r.deviation)) out << format_number(r.deviation);
        out << ',';
        if (!std::isnan(r.truth_error)) out << format_number(r.truth_error);
        std::string status = r.status;
        std::replace(status.begin(), status.end(), ',', ';');
        std::replace(status.begin(), status.end(), '\n', ' ');
        out << ',' << status << "\n";
    }
    return out.str();
}

std::string study_summary_csv(const std::vector<StudyRow>& rows, const StudySpec& study, double floor) {
    std::ostringstream out;
    out << "# noise_floor: " << format_number(floor) << "\n";
    out << "# noise floor = median over seeds of sup |benchmark QSF - true QSF|\n";
    out << "design,M,runs,failed,median_deviation,mean_deviation,max_deviation,median_ratio_to_noise_floor\n";
    for (auto design : study.designs)
        for (int m : study.bins) {
            std::vector<double> devs;
            int failed = 0;
            for (const auto& r : rows)
                if (r.design == to_string(design) && r.bins == m) {
                    if (r.status == "ok")
                        devs.push_back(r.deviation);
                    else
                        ++failed;
                }
            double mean = 0.0, max = 0.0;
            for (double d : devs) {
                mean += d;
                max = std::max(max, d);
            }
            const double med = median(devs);
            out << to_string(design) << ',' << m << ',' << devs.size() + failed << ',' << failed << ',';
            if (!devs.empty())
                out << format_number(med) << ',' << format_number(mean / devs.size()) << ',' << format_number(max);
            else
                out << ",,";
            out << ',';
            if (!devs.empty() && std::isfinite(floor) && floor > 0.0) out << format_number(med / floor);
            out << "\n";
        }
    return out.str();
}

}  // namespace

Dataset load_input(const RunConfig& config) {
    if (config.input.empty()) throw ConfigError("no input file given (set \"input\" or pass --input)");
    Dataset data = read_dataset_csv(config.input);
    if (config.discretization.design != DiscretizationSpec::Design::None)
        data.z = apply_discretization(config.discretization, data.z);
    return data;
}

std::vector<std::string> run_estimate(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command) {
    config.validate();
    const auto dir = prepare_output_dir(config.output_dir);
    Metadata meta("estimate", config, command);
    return with_metadata(dir, meta, [&](std::vector<std::string>& outputs) {
        const auto start = Clock::now();
        auto fit = diagnose_stage(config, dir, outputs, log);
        const bool identified = fit.report.identified();
        meta.j["identified"] = identified;
        if (!identified && config.identification_gate)
            throw IdentificationError("identification diagnostics failed: the rank flag or both estimated sets "
                                      "are empty at B=" + format_number(config.identification.threshold) +
                                      "; see diagnostics.txt (override with --no-gate)");
        if (!identified) log << "warning: identification diagnostics failed; continuing because the gate is off\n";

        const auto& spec = config.pipeline;
        PipelineResult point;
        point.first_stage = std::move(fit.first_stage);
        point.v_hat = std::move(fit.v_hat);
        point.second_stage =
            fit_second_stage(fit.data, point.v_hat, spec.basis, spec.epsilon, spec.grid_size, {}, spec.solver);
        point.region = make_region(fit.data, spec);
        point.estimates = evaluate_region(point.second_stage, ControlSample{fit.data.z1, point.v_hat, {}},
                                          point.region.mesh, point.region.p_levels, point.region.dsf_y_points);
        meta.j["timing_seconds"]["point"] = seconds_since(start);
        log << "point estimates done in " << std::setprecision(3) << seconds_since(start) << " s\n";

        StructuralEstimates tables = point.estimates;
        if (config.bands) {
            const auto boot_start = Clock::now();
            log << "bootstrap: " << config.bootstrap.replications << " replications on " << config.bootstrap.threads
                << " thread(s)\n";
            auto boot = run_bootstrap(fit.data, spec, point, config.bootstrap);
            tables = std::move(boot.estimates);
            meta.j["bootstrap"] = {{"replications", boot.draws.replications},
                                   {"failed", boot.draws.failed},
                                   {"failure_messages", boot.draws.failure_messages},
                                   {"critical_values",
                                    {{"dsf", boot.critical_dsf}, {"qsf", boot.critical_qsf}, {"asf", boot.critical_asf}}}};
            meta.j["timing_seconds"]["bootstrap"] = seconds_since(boot_start);
            if (!boot.draws.failed.empty())
                log << "warning: " << boot.draws.failed.size() << " bootstrap replication(s) failed\n";
        }
        for (const auto* e : {&tables.dsf, &tables.qsf, &tables.asf}) {
            const auto path = join(dir, lower(to_string(e->kind)) + ".csv");
            emit_plot_data(*e, path);
            outputs.push_back(path);
        }
        log << "wrote tables to " << dir << "\n";
    });
}

std::vector<std::string> run_diagnose(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command) {
    config.validate();
    const auto dir = prepare_output_dir(config.output_dir);
    Metadata meta("diagnose", config, command);
    return with_metadata(dir, meta, [&](std::vector<std::string>& outputs) {
        const auto fit = diagnose_stage(config, dir, outputs, log);
        meta.j["identified"] = fit.report.identified();
        log << fit.report.summary();
    });
}

std::vector<std::string> run_simulate(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command) {
    config.validate();
    const auto dir = prepare_output_dir(config.output_dir);
    Metadata meta("simulate", config, command);
    return with_metadata(dir, meta, [&](std::vector<std::string>& outputs) {
        const auto spec = presets::by_name(config.dgp, config.seed);
        const auto sample = simulate(spec, config.n);
        std::ostringstream data_csv;
        write_dataset_csv(data_csv, sample.data);
        const auto data_path = join(dir, "data.csv");
        write_file_atomically(data_path, data_csv.str());
        outputs.push_back(data_path);

        // truth on the region an estimate of this sample would use
        const GroundTruth truth(spec);
        const auto region = make_region(sample.data, config.pipeline);
        StructuralFunctionEstimate like;
        like.x_grid = region.mesh.x_grid;
        std::vector<StructuralFunctionEstimate> tables;
        for (auto kind : {StructuralKind::DSF, StructuralKind::QSF, StructuralKind::ASF}) {
            like.kind = kind;
            like.index_grid = kind == StructuralKind::DSF   ? region.dsf_y_points
                              : kind == StructuralKind::QSF ? Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(
                                                                  region.p_levels.data(),
                                                                  static_cast<Eigen::Index>(region.p_levels.size())))
                                                            : Eigen::VectorXd();
            tables.push_back(truth_estimate(truth, like));
        }
        std::ostringstream truth_csv;
        write_structural_csv(truth_csv, {&tables[0], &tables[1], &tables[2]},
                             {"population structural functions of DGP '" + config.dgp + "'",
                              "columns: x,index,value,lo,hi,kind (lo/hi empty)"});
        const auto truth_path = join(dir, "truth.csv");
        write_file_atomically(truth_path, truth_csv.str());
        outputs.push_back(truth_path);
        log << "simulated " << config.n << " observations from '" << config.dgp << "' (seed " << config.seed
            << ")\n";
    });
}

std::vector<StudyRow> discretization_study(const Dataset& data, const RunConfig& config, std::uint64_t seed,
                                           const GroundTruth* truth) {
    std::vector<StudyRow> rows;
    const auto& spec = config.pipeline;

    StudyRow bench_row;
    bench_row.seed = seed;
    bench_row.design = "continuous";
    std::optional<PipelineResult> bench;
    try {
        bench = fit_pipeline(data, spec);
        bench_row.deviation = 0.0;
        if (truth) {
            const auto& q = bench->estimates.qsf;
            bench_row.truth_error = sup_abs(q.values, true_table(*truth, StructuralKind::QSF, q.x_grid, q.index_grid));
        }
    } catch (const Error& e) {
        bench_row.status = e.what();
    }
    rows.push_back(bench_row);

    for (auto design : config.study.designs)
        for (int m : config.study.bins) {
            StudyRow row;
            row.seed = seed;
            row.design = to_string(design);
            row.bins = m;
            if (!bench) {
                row.status = "benchmark failed";
                rows.push_back(row);
                continue;
            }
            try {
                const auto coarse = data.with_instrument(apply_discretization({design, m}, data.z));
                const auto fit = fit_pipeline(coarse, spec, {}, bench->region);
                const auto& q = fit.estimates.qsf;
                row.deviation = sup_abs(q.values, bench->estimates.qsf.values);
                if (truth)
                    row.truth_error =
                        sup_abs(q.values, true_table(*truth, StructuralKind::QSF, q.x_grid, q.index_grid));
            } catch (const Error& e) {
                row.status = e.what();
            }
            rows.push_back(row);
        }
    return rows;
}

double noise_floor(const std::vector<StudyRow>& rows) {
    std::vector<double> errors;
    for (const auto& r : rows)
        if (r.design == "continuous" && r.status == "ok" && !std::isnan(r.truth_error)) errors.push_back(r.truth_error);
    return median(errors);
}

std::vector<std::string> run_study(const RunConfig& config, std::ostream& log,
                                   const std::vector<std::string>& command) {
    config.validate();
    const auto dir = prepare_output_dir(config.output_dir);
    Metadata meta("study", config, command);
    return with_metadata(dir, meta, [&](std::vector<std::string>& outputs) {
        std::vector<StudyRow> rows;
        if (!config.input.empty()) {
            // observed data: one pass, no truth
            auto plain = config;
            plain.discretization = {};
            const auto data = load_input(plain);
            log << "study on " << config.input << " (" << data.n() << " observations)\n";
            rows = discretization_study(data, config, config.seed);
        } else {
            for (int k = 0; k < config.study.seeds; ++k) {
                const auto seed = config.seed + static_cast<std::uint64_t>(k);
                const auto spec = presets::by_name(config.dgp, seed);
                const auto sample = simulate(spec, config.n);
                const GroundTruth truth(spec);
                auto part = discretization_study(sample.data, config, seed, &truth);
                log << "seed " << seed << ": " << part.size() << " fits\n";
                rows.insert(rows.end(), part.begin(), part.end());
            }
        }
        const double floor = noise_floor(rows);
        const auto csv = join(dir, "study.csv");
        const auto summary = join(dir, "study_summary.csv");
        write_file_atomically(csv, study_csv(rows));
        write_file_atomically(summary, study_summary_csv(rows, config.study, floor));
        outputs.push_back(csv);
        outputs.push_back(summary);
        meta.j["noise_floor"] = std::isnan(floor) ? json(nullptr) : json(floor);
        int failed = 0;
        for (const auto& r : rows) failed += r.status != "ok";
        meta.j["failed_cells"] = failed;
        if (failed) log << "warning: " << failed << " study cell(s) failed; see the status column\n";
    });
}

void emit_plot_data(const StructuralFunctionEstimate& estimate, const std::string& path) {
    std::vector<std::string> header{"kind: " + to_string(estimate.kind),
                                    "x: evaluation point of the endogenous regressor",
                                    "index: " + index_meaning(estimate.kind)};
    if (estimate.bands) {
        header.push_back("band_level: " + format_number(estimate.bands->level));
        header.push_back("lo,hi: uniform bootstrap band over the whole table");
    } else {
        header.push_back("lo,hi: empty (no bands)");
    }
    header.push_back("rows: " + std::to_string(estimate.values.size()));
    std::ostringstream out;
    write_structural_csv(out, {&estimate}, header);
    write_file_atomically(path, out.str());
}

std::vector<std::string> run_plotdata(const std::string& table, const std::string& kind, const std::string& out_dir,
                                      std::ostream& log) {
    const std::string wanted = kind == "all" ? kind : upper(kind);
    if (wanted != "all") structural_kind_from_string(wanted);  // validates
    const auto estimates = read_structural_csv(table);
    const auto dir = prepare_output_dir(out_dir);
    std::vector<std::string> outputs;
    for (const auto& e : estimates) {
        if (wanted != "all" && to_string(e.kind) != wanted) continue;
        const auto path = join(dir, "plot_" + lower(to_string(e.kind)) + ".csv");
        emit_plot_data(e, path);
        outputs.push_back(path);
        log << "wrote " << path << "\n";
    }
    if (outputs.empty()) throw InvalidInputError("table '" + table + "' holds no " + kind + " rows");
    return outputs;
}

RunConfig config_from_metadata(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open metadata file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("metadata file '" + path + "': " + e.what());
    }
    if (!j.is_object() || !j.contains("config")) throw ConfigError("metadata file '" + path + "' has no config");
    return run_config_from_json(j.at("config"));
}

}  // namespace cvqr
