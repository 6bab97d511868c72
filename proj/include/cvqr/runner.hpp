#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include "cvqr/config.hpp"
#include "cvqr/dgp.hpp"
#include "cvqr/structural.hpp"

namespace cvqr {

inline constexpr const char* kVersion = "1.0.0";

// Each run_* returns the paths it wrote. `command` is echoed into metadata.json.

/// Reads the configured input CSV and applies the configured discretization.
Dataset load_input(const RunConfig& config);

/// Point estimates, optional bands, diagnostics and metadata in output_dir.
/// Identification failures throw after the diagnostics are written.
std::vector<std::string> run_estimate(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command = {});

/// First stage and identification report only; never gated.
std::vector<std::string> run_diagnose(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command = {});

/// Simulated data.csv plus the population truth.csv on the sample's region.
std::vector<std::string> run_simulate(const RunConfig& config, std::ostream& log,
                                      const std::vector<std::string>& command = {});

struct StudyRow {
    std::uint64_t seed = 0;
    std::string design;  // "continuous" for the benchmark
    int bins = 0;
    double deviation = std::numeric_limits<double>::quiet_NaN();    // sup |QSF - benchmark QSF|
    double truth_error = std::numeric_limits<double>::quiet_NaN();  // sup |QSF - true QSF|
    std::string status = "ok";
};

/// Benchmark on the continuous instrument plus every (design, M) cell of the
/// study. Per-cell failures are recorded in `status`, not thrown.
std::vector<StudyRow> discretization_study(const Dataset& data, const RunConfig& config, std::uint64_t seed,
                                           const GroundTruth* truth = nullptr);

/// Median over seeds of the benchmark's sup error against the truth.
double noise_floor(const std::vector<StudyRow>& rows);

/// Runs the study over config.study.seeds simulated samples (or the input
/// file once) and writes study.csv, study_summary.csv and metadata.
std::vector<std::string> run_study(const RunConfig& config, std::ostream& log,
                                   const std::vector<std::string>& command = {});

/// Long-format CSV with a self-describing comment header.
void emit_plot_data(const StructuralFunctionEstimate& estimate, const std::string& path);

/// plot_<kind>.csv in out_dir for each table kind matching `kind` ("all", "dsf", "qsf", "asf").
std::vector<std::string> run_plotdata(const std::string& table, const std::string& kind, const std::string& out_dir,
                                      std::ostream& log);

/// The config echoed in a metadata file.
RunConfig config_from_metadata(const std::string& path);

}  // namespace cvqr
