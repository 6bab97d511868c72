#include "cvqr/first_stage.hpp"

#include <cmath>

#include "cvqr/errors.hpp"

namespace cvqr {

double trimmed_indicator_integral(const Eigen::VectorXd& predicted, double value, double epsilon) {
    if (!std::isfinite(value)) throw InvalidInputError("indicator integral at a non-finite point");
    Eigen::Index below = 0;
    for (Eigen::Index t = 0; t < predicted.size(); ++t) below += predicted(t) <= value ? 1 : 0;
    if (below == predicted.size()) return 1.0 - epsilon;
    return epsilon + (1.0 - 2.0 * epsilon) * static_cast<double>(below) / static_cast<double>(predicted.size());
}

Eigen::VectorXd FirstStageFit::predicted_quantiles(double z, double z1) const {
    return process.predict(build_first_stage_row(basis, z, z1));
}

double FirstStageFit::control_value(double x, double z, double z1) const {
    if (!std::isfinite(z) || !std::isfinite(z1)) throw InvalidInputError("control value at a non-finite instrument");
    return trimmed_indicator_integral(predicted_quantiles(z, z1), x, epsilon);
}

FirstStageFit fit_first_stage(const Dataset& data, const BasisSpec& basis, double epsilon, int grid_size,
                              const Eigen::VectorXd& weights, const SolverOptions& options) {
    data.validate();
    basis.validate();
    CheckLossProblem problem;
    problem.responses = data.x;
    problem.design = first_stage_design(basis, data);
    problem.weights = weights;
    problem.column_names = basis.first_stage_names();
    const auto grid = trimmed_grid(epsilon, grid_size);

    FirstStageFit out;
    out.epsilon = epsilon;
    out.basis = basis;
    try {
        out.process = fit_process(problem, grid, options);
    } catch (const RankDeficiencyError& e) {
        throw RankDeficiencyError(std::string("first stage: ") + e.what() +
                                      "; the instrument does not vary enough to identify the control variable "
                                      "(run `diagnose` for the identification report)",
                                  e.columns(), e.column_names());
    }
    return out;
}

Eigen::VectorXd control_values(const FirstStageFit& fit, const Dataset& data) {
    Eigen::VectorXd v(data.n());
    for (Eigen::Index i = 0; i < data.n(); ++i) v(i) = fit.control_value(data.x(i), data.z(i), data.z1(i));
    return v;
}

}  // namespace cvqr
