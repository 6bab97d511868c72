#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvqr/errors.hpp"

namespace cvqr {

/// Check function rho_level(z) = (level - 1{z < 0}) z.
template <typename Scalar>
Scalar check_loss(Scalar level, Scalar residual) {
    if (!std::isfinite(residual)) throw InvalidInputError("check_loss: non-finite residual");
    if (!(level > Scalar(0) && level < Scalar(1))) throw InvalidInputError("check_loss: level must lie in (0,1)");
    return (level - (residual < Scalar(0) ? Scalar(1) : Scalar(0))) * residual;
}

/// Weighted sum of check losses of `responses - design * coefficients`.
/// An empty `weights` vector means unit weights.
template <typename DerivedY, typename DerivedX, typename DerivedB>
double weighted_check_loss(const Eigen::MatrixBase<DerivedY>& responses, const Eigen::MatrixBase<DerivedX>& design,
                           const Eigen::MatrixBase<DerivedB>& coefficients, double level,
                           const Eigen::VectorXd& weights = {}) {
    const Eigen::VectorXd residual = responses - design * coefficients;
    double total = 0.0;
    for (Eigen::Index i = 0; i < residual.size(); ++i) {
        const double w = weights.size() ? weights(i) : 1.0;
        if (w != 0.0) total += w * check_loss(level, residual(i));
    }
    return total;
}

struct CheckLossProblem {
    Eigen::VectorXd responses;
    Eigen::MatrixXd design;
    double level = 0.5;
    Eigen::VectorXd weights;                // empty: unit weights
    std::vector<std::string> column_names;  // optional, used in rank-deficiency messages

    Eigen::Index rows() const { return design.rows(); }
    Eigen::Index cols() const { return design.cols(); }

    /// Throws InvalidInputError when the problem violates its invariants.
    void validate() const;
};

struct QuantileFit {
    Eigen::VectorXd coefficients;
    double objective = 0.0;
    double level = 0.5;
    bool converged = false;
    std::vector<Eigen::Index> basis;  // observations interpolated by the optimal vertex
};

/// Coefficient curve over a grid of quantile levels. Column t of `coefficients`
/// holds the fit at `levels[t]`.
struct QuantileProcess {
    std::vector<double> levels;
    Eigen::MatrixXd coefficients;  // k x T
    std::vector<double> objectives;

    Eigen::Index size() const { return static_cast<Eigen::Index>(levels.size()); }
    Eigen::Index dim() const { return coefficients.rows(); }

    /// Predicted quantiles coefficients(u_t)' w for every grid level.
    Eigen::VectorXd predict(const Eigen::VectorXd& w) const { return coefficients.transpose() * w; }
};

struct SolverOptions {
    int max_interior_iterations = 200;
    double gap_tolerance = 1e-9;
    // Simplex pivots allowed per level; 0 picks 50 * n + 1000.
    long max_pivots = 0;
};

/// Global minimizer of the weighted check loss at a single level.
QuantileFit fit(const CheckLossProblem& problem, const SolverOptions& options = {});

/// Fits every level of an increasing grid. Levels after the first warm-start
/// from the neighbouring optimal vertex.
QuantileProcess fit_process(const CheckLossProblem& problem_template, std::span<const double> grid,
                            const SolverOptions& options = {});

/// Trimmed equispaced grid {eps = u_1 < ... < u_T = 1 - eps}; T >= 2.
std::vector<double> trimmed_grid(double epsilon, int count);

/// Throws RankDeficiencyError naming the dependent columns of `design`
/// restricted to rows with positive weight.
void require_full_column_rank(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights,
                              const std::vector<std::string>& column_names);

}  // namespace cvqr
