#pragma once

#include <optional>

#include <Eigen/Dense>

#include "cvqr/design.hpp"
#include "cvqr/first_stage.hpp"
#include "cvqr/qr_solver.hpp"
#include "cvqr/second_stage.hpp"
#include "cvqr/structural.hpp"

namespace cvqr {

/// Everything the three-stage estimator needs besides the data.
struct PipelineSpec {
    BasisSpec basis = BasisSpec::standard();
    double epsilon = 0.01;
    int grid_size = 599;  // T, both stages
    RegionSpec region;    // x-grid, p-levels, mesh size S, measure
    SolverOptions solver;

    void validate() const;
};

/// Evaluation points fixed by the point estimate and reused by every refit.
struct EvaluationRegion {
    EvaluationMesh mesh;
    Eigen::VectorXd dsf_y_points;
    std::vector<double> p_levels;
};

EvaluationRegion make_region(const Dataset& data, const PipelineSpec& spec);

struct PipelineResult {
    FirstStageFit first_stage;
    Eigen::VectorXd v_hat;
    SecondStageFit second_stage;
    EvaluationRegion region;
    StructuralEstimates estimates;
};

/// First stage, control values, second stage and structural tables. With
/// `weights` every stage uses the weighted check loss and the weighted sample
/// average; `region` pins the evaluation points (bootstrap refits).
PipelineResult fit_pipeline(const Dataset& data, const PipelineSpec& spec, const Eigen::VectorXd& weights = {},
                            const std::optional<EvaluationRegion>& region = std::nullopt);

}  // namespace cvqr
