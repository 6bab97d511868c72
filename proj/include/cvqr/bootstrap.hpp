#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvqr/pipeline.hpp"

namespace cvqr {

struct BootstrapConfig {
    int replications = 250;
    double level = 0.90;
    // "exponential" (unit mean, unit variance) or "constant" (all weights 1).
    std::string weight_law = "exponential";
    std::uint64_t seed = 1;
    int threads = 1;
    // A run errors when more than this share of replications fails.
    double max_failure_share = 0.10;

    void validate() const;
};

/// Weight vector of replication r; depends only on (seed, r, n).
Eigen::VectorXd bootstrap_weights(const BootstrapConfig& config, int replication, Eigen::Index n);

/// Flattened structural tables of every successful replication.
struct BootstrapDraws {
    std::vector<Eigen::MatrixXd> dsf, qsf, asf;
    std::vector<int> failed;  // replication indices
    std::vector<std::string> failure_messages;
    int replications = 0;
};

BootstrapDraws draw_bootstrap(const Dataset& data, const PipelineSpec& spec, const PipelineResult& point,
                              const BootstrapConfig& config);

/// Symmetric max-|t| band around `estimate` with per-point scale
/// IQR / 1.349 of the draws (the draw standard deviation where the IQR is 0).
/// The statistic is recentred at the point estimate. Writes the critical value
/// to `critical` when given.
Bands max_t_band(const Eigen::MatrixXd& estimate, const std::vector<Eigen::MatrixXd>& draws, double level,
                 double* critical = nullptr);

struct BootstrapResult {
    StructuralEstimates estimates;  // point estimates with bands attached
    BootstrapDraws draws;
    double critical_dsf = 0.0, critical_qsf = 0.0, critical_asf = 0.0;
};

/// Draws, checks the failure budget (NumericError when exceeded), and attaches bands.
BootstrapResult run_bootstrap(const Dataset& data, const PipelineSpec& spec, const PipelineResult& point,
                              const BootstrapConfig& config);

/// Bands from existing draws at another level.
StructuralEstimates attach_bands(const StructuralEstimates& point, const BootstrapDraws& draws, double level);

}  // namespace cvqr
