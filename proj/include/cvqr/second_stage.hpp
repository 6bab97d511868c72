#pragma once

#include <Eigen/Dense>

#include "cvqr/design.hpp"
#include "cvqr/qr_solver.hpp"

namespace cvqr {

/// Quantile-regression process of Y on w(X, Z1, V_hat).
struct SecondStageFit {
    QuantileProcess process;
    double epsilon = 0.01;
    BasisSpec basis;
    Eigen::VectorXd control;  // the V_hat the process was fitted on

    Eigen::VectorXd predicted_quantiles(double x, double z1, double v) const;

    /// eps + integral over the trimmed u-grid of 1{beta(u)' w(x, z1, v) <= y}.
    double crf_distribution(double y, double x, double z1, double v) const;

    /// Trapezoidal mean of beta(u)' w over [eps, 1 - eps], normalised by 1 - 2 eps.
    /// The excluded tail mass 2 eps is not extrapolated.
    double mean_from_quantiles(double x, double z1, double v) const;
};

SecondStageFit fit_second_stage(const Dataset& data, const Eigen::VectorXd& v_hat, const BasisSpec& basis,
                                double epsilon, int grid_size, const Eigen::VectorXd& weights = {},
                                const SolverOptions& options = {});

/// Trapezoid of `values` over `levels` divided by the level span.
double trimmed_mean(const std::vector<double>& levels, const Eigen::VectorXd& values);

}  // namespace cvqr
