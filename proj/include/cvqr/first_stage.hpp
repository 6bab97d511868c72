#pragma once

#include <Eigen/Dense>

#include "cvqr/design.hpp"
#include "cvqr/qr_solver.hpp"

namespace cvqr {

/// Quantile-regression process of X on s(z) (x) r(z1) over a trimmed grid.
struct FirstStageFit {
    QuantileProcess process;
    double epsilon = 0.01;
    BasisSpec basis;

    /// F_hat(x | z, z1) = eps + (1 - 2 eps) / T * #{t : pi(v_t)' [s(z) (x) r(z1)] <= x}.
    double control_value(double x, double z, double z1) const;
    /// Predicted conditional quantile Q_hat(v_t | z, z1) for every grid level.
    Eigen::VectorXd predicted_quantiles(double z, double z1) const;
};

FirstStageFit fit_first_stage(const Dataset& data, const BasisSpec& basis, double epsilon, int grid_size,
                              const Eigen::VectorXd& weights = {}, const SolverOptions& options = {});

Eigen::VectorXd control_values(const FirstStageFit& fit, const Dataset& data);

/// eps + (1 - 2 eps) / T * #{t : predicted(t) <= value}; shared by both stages.
double trimmed_indicator_integral(const Eigen::VectorXd& predicted, double value, double epsilon);

}  // namespace cvqr
