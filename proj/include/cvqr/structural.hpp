#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvqr/design.hpp"
#include "cvqr/second_stage.hpp"

namespace cvqr {

enum class Measure { Continuous, Counting };
enum class StructuralKind { DSF, QSF, ASF };

std::string to_string(StructuralKind kind);
StructuralKind structural_kind_from_string(const std::string& text);

/// S equidistant points from lo to hi.
Eigen::VectorXd outcome_mesh(double lo, double hi, int points);

struct EvaluationMesh {
    Eigen::VectorXd y_mesh;   // equidistant, used for the continuous measure
    Eigen::VectorXd support;  // distinct observed outcomes, used for the counting measure
    Measure measure = Measure::Continuous;
    Eigen::VectorXd x_grid;

    double width() const;
    /// Points the DSF must be tabulated on to invert it.
    const Eigen::VectorXd& integration_points() const { return measure == Measure::Continuous ? y_mesh : support; }
};

struct RegionSpec {
    // x-grid: `x_points` type-1 sample quantiles of X equally spaced over
    // [x_quantile_lo, x_quantile_hi]; `x_values` overrides when nonempty.
    double x_quantile_lo = 0.1;
    double x_quantile_hi = 0.9;
    int x_points = 5;
    std::vector<double> x_values;
    std::vector<double> p_levels{0.25, 0.5, 0.75};
    // DSF table rows: sample quantiles of Y at these levels.
    std::vector<double> dsf_y_levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    int mesh_points = 599;
    Measure measure = Measure::Continuous;

    void validate() const;
};

/// Builds the x-grid and outcome mesh from the sample. Throws InvalidInputError
/// on an empty region.
EvaluationMesh make_mesh(const Dataset& data, const RegionSpec& region);

struct Bands {
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
    double level = 0.9;
};

/// A structural function tabulated on x_grid (rows) by index_grid (columns).
/// ASF has an empty index grid and a single column.
struct StructuralFunctionEstimate {
    StructuralKind kind = StructuralKind::QSF;
    Eigen::VectorXd x_grid;
    Eigen::VectorXd index_grid;
    Eigen::MatrixXd values;
    std::optional<Bands> bands;

    /// Linear interpolation across the x-grid for column `column`; monotone
    /// between grid points, constant beyond the ends.
    double interpolate(double x, Eigen::Index column = 0) const;
};

/// Observations the third stage averages over: (Z1_i, V_hat_i) with optional weights.
struct ControlSample {
    Eigen::VectorXd z1;
    Eigen::VectorXd v_hat;
    Eigen::VectorXd weights;  // empty: equal weights
};

/// G_hat(y, x) = weighted mean over the sample of F_hat(y | x, Z1_i, V_hat_i).
double dsf(const SecondStageFit& fit, const ControlSample& sample, double y, double x);

/// G_hat(., x) on each of `y_points`.
Eigen::VectorXd tabulate_dsf(const SecondStageFit& fit, const ControlSample& sample, double x,
                             const Eigen::VectorXd& y_points);

/// delta * sum_s [1(y_s >= 0) - 1{G(y_s) >= p}], plus the part of [0, y_1) or
/// (y_S, 0] the mesh does not cover. Throws DomainError for p outside [eps, 1 - eps].
double qsf(const Eigen::VectorXd& G, const Eigen::VectorXd& y_mesh, double p, double epsilon);

/// delta * sum_s [1(y_s >= 0) - G(y_s)] plus the same uncovered part.
double asf_continuous(const Eigen::VectorXd& G, const Eigen::VectorXd& y_mesh);

/// sum over support points y >= 0 of 1 - G(y) minus sum over y < 0 of G(y).
double asf_counting(const Eigen::VectorXd& G, const Eigen::VectorXd& support);

double asf(const Eigen::VectorXd& G, const EvaluationMesh& mesh);

struct StructuralEstimates {
    StructuralFunctionEstimate dsf;
    StructuralFunctionEstimate qsf;
    StructuralFunctionEstimate asf;
};

/// Tabulates DSF, QSF and ASF over the mesh's x-grid.
StructuralEstimates evaluate_region(const SecondStageFit& fit, const ControlSample& sample, const EvaluationMesh& mesh,
                                    const std::vector<double>& p_levels, const Eigen::VectorXd& dsf_y_points);

}  // namespace cvqr
