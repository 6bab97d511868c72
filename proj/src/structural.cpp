#include "cvqr/structural.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "cvqr/errors.hpp"

namespace cvqr {

namespace {

// Uncovered stretch between zero and the mesh: where G = 0 below the
// support (contributes +y_1) or G = 1 above it (contributes y_S).
double uncovered(const Eigen::VectorXd& mesh) {
    return std::max(mesh(0), 0.0) + std::min(mesh(mesh.size() - 1), 0.0);
}

struct Group {
    double z1;
    double v;
    double weight;
};

std::vector<Group> group_controls(const ControlSample& sample) {
    if (sample.z1.size() != sample.v_hat.size()) throw InvalidInputError("control sample columns differ in length");
    if (sample.weights.size() != 0 && sample.weights.size() != sample.z1.size()) {
        throw InvalidInputError("control sample weights differ in length");
    }
    if (sample.z1.size() == 0) throw InvalidInputError("control sample is empty");
    std::map<std::pair<double, double>, double> totals;
    for (Eigen::Index i = 0; i < sample.z1.size(); ++i) {
        totals[{sample.z1(i), sample.v_hat(i)}] += sample.weights.size() ? sample.weights(i) : 1.0;
    }
    std::vector<Group> groups;
    groups.reserve(totals.size());
    double total = 0.0;
    for (const auto& [key, w] : totals) total += w;
    if (!(total > 0.0)) throw InvalidInputError("control sample weights sum to zero");
    for (const auto& [key, w] : totals) groups.push_back({key.first, key.second, w / total});
    return groups;
}

}  // namespace

std::string to_string(StructuralKind kind) {
    switch (kind) {
        case StructuralKind::DSF: return "DSF";
        case StructuralKind::QSF: return "QSF";
        case StructuralKind::ASF: return "ASF";
    }
    return "?";
}

StructuralKind structural_kind_from_string(const std::string& text) {
    if (text == "DSF") return StructuralKind::DSF;
    if (text == "QSF") return StructuralKind::QSF;
    if (text == "ASF") return StructuralKind::ASF;
    throw InvalidInputError("unknown structural function kind '" + text + "'");
}

Eigen::VectorXd outcome_mesh(double lo, double hi, int points) {
    if (points < 2) throw InvalidInputError("outcome mesh needs S >= 2 points");
    if (!(hi > lo)) throw InvalidInputError("outcome mesh needs a positive width (outcome is constant)");
    Eigen::VectorXd mesh = Eigen::VectorXd::LinSpaced(points, lo, hi);
    mesh(points - 1) = hi;
    return mesh;
}

double EvaluationMesh::width() const {
    return (y_mesh(y_mesh.size() - 1) - y_mesh(0)) / static_cast<double>(y_mesh.size() - 1);
}

void RegionSpec::validate() const {
    if (x_values.empty()) {
        if (x_points < 1) throw InvalidInputError("invalid region: x_points must be >= 1");
        if (!(x_quantile_lo >= 0.0 && x_quantile_hi <= 1.0 && x_quantile_lo <= x_quantile_hi)) {
            throw InvalidInputError("invalid region: x quantile range must satisfy 0 <= lo <= hi <= 1");
        }
    }
    if (p_levels.empty()) throw InvalidInputError("invalid region: no quantile levels requested");
    for (double p : p_levels) {
        if (!(p > 0.0 && p < 1.0)) throw InvalidInputError("invalid region: p levels must lie in (0,1)");
    }
    for (double p : dsf_y_levels) {
        if (!(p >= 0.0 && p <= 1.0)) throw InvalidInputError("invalid region: DSF y levels must lie in [0,1]");
    }
    if (mesh_points < 2) throw InvalidInputError("invalid region: S must be >= 2");
}

EvaluationMesh make_mesh(const Dataset& data, const RegionSpec& region) {
    region.validate();
    if (data.n() == 0) throw InvalidInputError("invalid region: empty sample");
    EvaluationMesh mesh;
    mesh.measure = region.measure;
    if (!region.x_values.empty()) {
        mesh.x_grid = Eigen::Map<const Eigen::VectorXd>(region.x_values.data(),
                                                        static_cast<Eigen::Index>(region.x_values.size()));
    } else {
        std::vector<double> xs(data.x.data(), data.x.data() + data.n());
        std::sort(xs.begin(), xs.end());
        mesh.x_grid.resize(region.x_points);
        for (int j = 0; j < region.x_points; ++j) {
            const double level = region.x_points == 1
                                     ? region.x_quantile_lo
                                     : region.x_quantile_lo + (region.x_quantile_hi - region.x_quantile_lo) * j /
                                                                  (region.x_points - 1);
            mesh.x_grid(j) = sample_quantile_type1(xs, level);
        }
    }
    mesh.y_mesh = outcome_mesh(data.y.minCoeff(), data.y.maxCoeff(), region.mesh_points);
    std::vector<double> ys(data.y.data(), data.y.data() + data.n());
    std::sort(ys.begin(), ys.end());
    ys.erase(std::unique(ys.begin(), ys.end()), ys.end());
    mesh.support = Eigen::Map<const Eigen::VectorXd>(ys.data(), static_cast<Eigen::Index>(ys.size()));
    return mesh;
}

double StructuralFunctionEstimate::interpolate(double x, Eigen::Index column) const {
    const Eigen::Index m = x_grid.size();
    if (m == 0) throw InvalidInputError("interpolation on an empty grid");
    if (x <= x_grid(0)) return values(0, column);
    if (x >= x_grid(m - 1)) return values(m - 1, column);
    Eigen::Index j = 1;
    while (x_grid(j) < x) ++j;
    const double span = x_grid(j) - x_grid(j - 1);
    if (span <= 0.0) return values(j, column);
    const double t = (x - x_grid(j - 1)) / span;
    return (1.0 - t) * values(j - 1, column) + t * values(j, column);
}

Eigen::VectorXd tabulate_dsf(const SecondStageFit& fit, const ControlSample& sample, double x,
                             const Eigen::VectorXd& y_points) {
    const auto groups = group_controls(sample);
    const auto T = static_cast<double>(fit.process.size());
    const double eps = fit.epsilon;
    Eigen::VectorXd G = Eigen::VectorXd::Zero(y_points.size());
    std::vector<double> q;
    for (const Group& g : groups) {
        const Eigen::VectorXd predicted = fit.predicted_quantiles(x, g.z1, g.v);
        q.assign(predicted.data(), predicted.data() + predicted.size());
        std::sort(q.begin(), q.end());
        for (Eigen::Index s = 0; s < y_points.size(); ++s) {
            const auto below = std::upper_bound(q.begin(), q.end(), y_points(s)) - q.begin();
            G(s) += g.weight * (eps + (1.0 - 2.0 * eps) * static_cast<double>(below) / T);
        }
    }
    // rounding in the weighted sum must not leave [eps, 1 - eps]
    return G.cwiseMax(eps).cwiseMin(1.0 - eps);
}

double dsf(const SecondStageFit& fit, const ControlSample& sample, double y, double x) {
    if (!std::isfinite(y) || !std::isfinite(x)) throw InvalidInputError("DSF at a non-finite point");
    return tabulate_dsf(fit, sample, x, Eigen::VectorXd::Constant(1, y))(0);
}

double qsf(const Eigen::VectorXd& G, const Eigen::VectorXd& y_mesh, double p, double epsilon) {
    if (!(p >= epsilon && p <= 1.0 - epsilon)) {
        throw DomainError("QSF level " + std::to_string(p) + " lies outside the identified range [" +
                          std::to_string(epsilon) + ", " + std::to_string(1.0 - epsilon) + "]");
    }
    if (G.size() != y_mesh.size() || y_mesh.size() < 2) throw InvalidInputError("QSF needs G tabulated on the mesh");
    const double delta = (y_mesh(y_mesh.size() - 1) - y_mesh(0)) / static_cast<double>(y_mesh.size() - 1);
    double count = 0.0;
    for (Eigen::Index s = 0; s < y_mesh.size(); ++s) {
        count += (y_mesh(s) >= 0.0 ? 1.0 : 0.0) - (G(s) >= p ? 1.0 : 0.0);
    }
    return delta * count + uncovered(y_mesh);
}

double asf_continuous(const Eigen::VectorXd& G, const Eigen::VectorXd& y_mesh) {
    if (G.size() != y_mesh.size() || y_mesh.size() < 2) throw InvalidInputError("ASF needs G tabulated on the mesh");
    const double delta = (y_mesh(y_mesh.size() - 1) - y_mesh(0)) / static_cast<double>(y_mesh.size() - 1);
    double total = 0.0;
    for (Eigen::Index s = 0; s < y_mesh.size(); ++s) total += (y_mesh(s) >= 0.0 ? 1.0 : 0.0) - G(s);
    return delta * total + uncovered(y_mesh);
}

double asf_counting(const Eigen::VectorXd& G, const Eigen::VectorXd& support) {
    if (G.size() != support.size()) throw InvalidInputError("ASF needs G tabulated on the support");
    double total = 0.0;
    for (Eigen::Index s = 0; s < support.size(); ++s) total += support(s) >= 0.0 ? 1.0 - G(s) : -G(s);
    return total;
}

double asf(const Eigen::VectorXd& G, const EvaluationMesh& mesh) {
    return mesh.measure == Measure::Continuous ? asf_continuous(G, mesh.y_mesh) : asf_counting(G, mesh.support);
}

StructuralEstimates evaluate_region(const SecondStageFit& fit, const ControlSample& sample, const EvaluationMesh& mesh,
                                    const std::vector<double>& p_levels, const Eigen::VectorXd& dsf_y_points) {
    const Eigen::Index nx = mesh.x_grid.size();
    if (nx == 0 || p_levels.empty()) throw InvalidInputError("invalid region: empty x-grid or p-levels");
    const auto np = static_cast<Eigen::Index>(p_levels.size());

    StructuralEstimates out;
    out.dsf.kind = StructuralKind::DSF;
    out.qsf.kind = StructuralKind::QSF;
    out.asf.kind = StructuralKind::ASF;
    for (auto* e : {&out.dsf, &out.qsf, &out.asf}) e->x_grid = mesh.x_grid;
    out.dsf.index_grid = dsf_y_points;
    out.qsf.index_grid = Eigen::Map<const Eigen::VectorXd>(p_levels.data(), np);
    out.dsf.values.resize(nx, dsf_y_points.size());
    out.qsf.values.resize(nx, np);
    out.asf.values.resize(nx, 1);

    // QSF always inverts on the equidistant mesh; the ASF follows the measure.
    for (Eigen::Index j = 0; j < nx; ++j) {
        const double x = mesh.x_grid(j);
        const Eigen::VectorXd G = tabulate_dsf(fit, sample, x, mesh.y_mesh);
        for (Eigen::Index c = 0; c < np; ++c) out.qsf.values(j, c) = qsf(G, mesh.y_mesh, p_levels[static_cast<size_t>(c)], fit.epsilon);
        out.asf.values(j, 0) = mesh.measure == Measure::Continuous
                                   ? asf_continuous(G, mesh.y_mesh)
                                   : asf_counting(tabulate_dsf(fit, sample, x, mesh.support), mesh.support);
        if (dsf_y_points.size()) out.dsf.values.row(j) = tabulate_dsf(fit, sample, x, dsf_y_points).transpose();
    }
    return out;
}

}  // namespace cvqr
