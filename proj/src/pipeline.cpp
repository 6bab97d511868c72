#include "cvqr/pipeline.hpp"

#include <algorithm>

#include "cvqr/errors.hpp"

namespace cvqr {

void PipelineSpec::validate() const {
    basis.validate();
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw ConfigError("epsilon must lie in (0, 0.5)");
    if (grid_size < 2) throw ConfigError("T must be at least 2");
    region.validate();
    for (double p : region.p_levels)
        if (p < epsilon || p > 1.0 - epsilon)
            throw ConfigError("p-level " + std::to_string(p) + " lies outside [epsilon, 1 - epsilon]");
}

EvaluationRegion make_region(const Dataset& data, const PipelineSpec& spec) {
    EvaluationRegion out;
    out.mesh = make_mesh(data, spec.region);
    out.p_levels = spec.region.p_levels;
    std::vector<double> ys(data.y.data(), data.y.data() + data.n());
    std::sort(ys.begin(), ys.end());
    out.dsf_y_points.resize(static_cast<Eigen::Index>(spec.region.dsf_y_levels.size()));
    for (std::size_t j = 0; j < spec.region.dsf_y_levels.size(); ++j)
        out.dsf_y_points(static_cast<Eigen::Index>(j)) = sample_quantile_type1(ys, spec.region.dsf_y_levels[j]);
    return out;
}

PipelineResult fit_pipeline(const Dataset& data, const PipelineSpec& spec, const Eigen::VectorXd& weights,
                            const std::optional<EvaluationRegion>& region) {
    spec.validate();
    data.validate();
    if (weights.size() && weights.size() != data.n()) throw InvalidInputError("weights length differs from sample size");

    PipelineResult out;
    out.first_stage = fit_first_stage(data, spec.basis, spec.epsilon, spec.grid_size, weights, spec.solver);
    out.v_hat = control_values(out.first_stage, data);
    out.second_stage = fit_second_stage(data, out.v_hat, spec.basis, spec.epsilon, spec.grid_size, weights,
                                        spec.solver);
    out.region = region ? *region : make_region(data, spec);
    const ControlSample sample{data.z1, out.v_hat, weights};
    out.estimates = evaluate_region(out.second_stage, sample, out.region.mesh, out.region.p_levels,
                                    out.region.dsf_y_points);
    return out;
}

}  // namespace cvqr
