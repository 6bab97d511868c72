#include "cvqr/second_stage.hpp"

#include <cmath>

#include "cvqr/errors.hpp"
#include "cvqr/first_stage.hpp"

namespace cvqr {

Eigen::VectorXd SecondStageFit::predicted_quantiles(double x, double z1, double v) const {
    return process.predict(build_w(basis, x, z1, v));
}

double SecondStageFit::crf_distribution(double y, double x, double z1, double v) const {
    return trimmed_indicator_integral(predicted_quantiles(x, z1, v), y, epsilon);
}

double trimmed_mean(const std::vector<double>& levels, const Eigen::VectorXd& values) {
    if (levels.size() < 2) return values(0);
    double area = 0.0;
    for (size_t t = 1; t < levels.size(); ++t) {
        const auto i = static_cast<Eigen::Index>(t);
        area += 0.5 * (values(i) + values(i - 1)) * (levels[t] - levels[t - 1]);
    }
    return area / (levels.back() - levels.front());
}

double SecondStageFit::mean_from_quantiles(double x, double z1, double v) const {
    return trimmed_mean(process.levels, predicted_quantiles(x, z1, v));
}

SecondStageFit fit_second_stage(const Dataset& data, const Eigen::VectorXd& v_hat, const BasisSpec& basis,
                                double epsilon, int grid_size, const Eigen::VectorXd& weights,
                                const SolverOptions& options) {
    data.validate();
    basis.validate();
    if (v_hat.size() != data.n()) throw InvalidInputError("control vector length differs from sample size");
    CheckLossProblem problem;
    problem.responses = data.y;
    problem.design = second_stage_design(basis, data, v_hat);
    problem.weights = weights;
    problem.column_names = basis.w_names();

    SecondStageFit out;
    out.epsilon = epsilon;
    out.basis = basis;
    out.control = v_hat;
    try {
        out.process = fit_process(problem, trimmed_grid(epsilon, grid_size), options);
    } catch (const RankDeficiencyError& e) {
        throw RankDeficiencyError(std::string("second stage: ") + e.what() +
                                      "; E[w w'] is singular (see the diagnostics eigenvalue report)",
                                  e.columns(), e.column_names());
    }
    return out;
}

}  // namespace cvqr
