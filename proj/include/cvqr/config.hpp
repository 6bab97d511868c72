#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvqr/bootstrap.hpp"
#include "cvqr/identification.hpp"
#include "cvqr/pipeline.hpp"

namespace cvqr {

struct DiscretizationSpec {
    enum class Design { None, Design1, Design2 };
    Design design = Design::None;
    int bins = 2;  // M
};

std::string to_string(DiscretizationSpec::Design design);
DiscretizationSpec::Design design_from_string(const std::string& text);

/// Instrument column after the configured discretization (unchanged for None).
Eigen::VectorXd apply_discretization(const DiscretizationSpec& spec, const Eigen::VectorXd& z);

struct StudySpec {
    std::vector<int> bins{2, 3, 5, 15};
    std::vector<DiscretizationSpec::Design> designs{DiscretizationSpec::Design::Design1,
                                                   DiscretizationSpec::Design::Design2};
    int seeds = 10;  // consecutive seeds starting at RunConfig::seed
};

/// One batch run: estimation settings plus the knobs of simulate and study.
struct RunConfig {
    std::string input;
    std::string output_dir = "cvqr-out";
    std::uint64_t seed = 1;
    PipelineSpec pipeline;
    bool bands = true;
    BootstrapConfig bootstrap;
    DiscretizationSpec discretization;
    DiagnosticsOptions identification;
    bool identification_gate = true;  // estimate stops with exit 3 when not identified
    std::string dgp = "linear-binary";
    long n = 5000;
    StudySpec study;

    void validate() const;
};

/// Strict reader: unknown keys and wrong types raise ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RunConfig& config);

RunConfig load_run_config(const std::string& path);

}  // namespace cvqr
