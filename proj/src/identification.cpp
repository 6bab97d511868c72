#include "cvqr/identification.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "cvqr/errors.hpp"

namespace cvqr {

namespace {

struct Cell {
    std::vector<Eigen::Index> members;
    double lo = 0.0;
    double hi = 0.0;
    double representative = 0.0;
};

// Distinct values when few, otherwise type-1 quantile bins [e_m, e_{m+1}),
// the top bin closed. Empty bins (ties) are dropped.
std::vector<Cell> bin_indices(const Eigen::VectorXd& values, const std::vector<Eigen::Index>& index,
                              const Binning& binning) {
    if (binning.bins < 1) throw ConfigError("binning: bins must be positive");
    std::vector<double> sorted;
    sorted.reserve(index.size());
    for (auto i : index) sorted.push_back(values(i));
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> uniq = sorted;
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());

    std::vector<Cell> cells;
    if (static_cast<int>(uniq.size()) <= binning.bins) {
        cells.resize(uniq.size());
        for (std::size_t c = 0; c < uniq.size(); ++c) cells[c].lo = cells[c].hi = cells[c].representative = uniq[c];
        for (auto i : index) {
            const auto c = std::lower_bound(uniq.begin(), uniq.end(), values(i)) - uniq.begin();
            cells[c].members.push_back(i);
        }
        return cells;
    }

    std::vector<double> edges;
    for (int m = 0; m <= binning.bins; ++m) edges.push_back(sample_quantile_type1(sorted, double(m) / binning.bins));
    std::vector<Cell> raw(binning.bins);
    for (int m = 0; m < binning.bins; ++m) {
        raw[m].lo = edges[m];
        raw[m].hi = edges[m + 1];
    }
    for (auto i : index) {
        // last edge e_m <= value, capped at the top bin
        auto m = std::upper_bound(edges.begin(), edges.end(), values(i)) - edges.begin() - 1;
        m = std::clamp<std::ptrdiff_t>(m, 0, binning.bins - 1);
        raw[m].members.push_back(i);
    }
    for (auto& cell : raw) {
        if (cell.members.empty()) continue;
        std::vector<double> v;
        for (auto i : cell.members) v.push_back(values(i));
        std::sort(v.begin(), v.end());
        cell.representative = sample_quantile_type1(v, 0.5);
        cells.push_back(std::move(cell));
    }
    return cells;
}

// Observation indices grouped by stratum value; one group when strata is empty.
std::map<double, std::vector<Eigen::Index>> strata_groups(Eigen::Index n, const Eigen::VectorXd& strata) {
    std::map<double, std::vector<Eigen::Index>> groups;
    for (Eigen::Index i = 0; i < n; ++i) groups[strata.size() ? strata(i) : 0.0].push_back(i);
    return groups;
}

struct Row {
    double scalar;
    Eigen::VectorXd terms;
};

EigenCell summarize(const std::vector<Row>& rows, double probability, const Binning& binning,
                    double threshold, bool two_term) {
    EigenCell cell;
    cell.count = static_cast<Eigen::Index>(rows.size());
    cell.probability = probability;
    const Eigen::Index dim = rows.front().terms.size();
    Eigen::MatrixXd m = Eigen::MatrixXd::Zero(dim, dim);
    std::set<double> distinct;
    for (const auto& r : rows) {
        m.noalias() += r.terms * r.terms.transpose();
        distinct.insert(r.scalar);
    }
    m /= static_cast<double>(rows.size());
    cell.second_moment = m;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m, Eigen::EigenvaluesOnly);
    // PSD by construction; negative values are rounding.
    cell.min_eigenvalue = std::max(0.0, eig.eigenvalues()(0));
    cell.max_eigenvalue = eig.eigenvalues()(dim - 1);
    cell.distinct_values = static_cast<int>(distinct.size());
    if (two_term) cell.variance = std::max(0.0, m(1, 1) - m(0, 1) * m(0, 1));
    cell.usable = cell.count >= static_cast<Eigen::Index>(binning.min_cell_factor) * dim;
    cell.in_set = cell.usable && cell.min_eigenvalue >= threshold;
    return cell;
}

bool is_two_term(const std::vector<Term>& terms) { return terms.size() == 2 && terms[0].is_constant(); }

}  // namespace

MomentReport moment_matrix(const Eigen::MatrixXd& rows, double relative_threshold) {
    if (rows.rows() == 0 || rows.cols() == 0) throw InvalidInputError("moment_matrix: empty design");
    MomentReport report;
    report.matrix = rows.transpose() * rows / static_cast<double>(rows.rows());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(report.matrix, Eigen::EigenvaluesOnly);
    report.eigenvalues = eig.eigenvalues();
    report.min_eigenvalue = report.eigenvalues(0);
    report.max_eigenvalue = report.eigenvalues(report.eigenvalues.size() - 1);
    report.condition_number = report.min_eigenvalue > 0.0 ? report.max_eigenvalue / report.min_eigenvalue
                                                          : std::numeric_limits<double>::infinity();
    report.threshold = relative_threshold * report.matrix.trace() / static_cast<double>(rows.cols());
    report.rank_ok = report.min_eigenvalue >= report.threshold;
    return report;
}

MomentReport moment_matrix(const Dataset& data, const BasisSpec& basis, const Eigen::VectorXd& v,
                           double relative_threshold) {
    MomentReport report = moment_matrix(second_stage_design(basis, data, v), relative_threshold);
    report.names = basis.w_names();
    return report;
}

std::vector<std::size_t> ConditionalEigenProfile::estimated_set() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (cells[c].in_set) out.push_back(c);
    return out;
}

std::vector<std::size_t> ConditionalEigenProfile::support_set() const {
    std::vector<std::size_t> out;
    for (std::size_t c = 0; c < cells.size(); ++c)
        if (cells[c].usable && cells[c].distinct_values >= 2) out.push_back(c);
    return out;
}

double ConditionalEigenProfile::set_probability() const {
    double total = 0.0;
    for (const auto& c : cells)
        if (c.in_set) total += c.probability;
    return total;
}

ConditionalEigenProfile ConditionalEigenProfile::at_threshold(double B) const {
    ConditionalEigenProfile out = *this;
    out.threshold = B;
    for (auto& c : out.cells) c.in_set = c.usable && c.min_eigenvalue >= B;
    return out;
}

ConditionalEigenProfile conditional_profile(const std::string& label, const Eigen::VectorXd& conditioning,
                                            const Eigen::VectorXd& other, const std::vector<Term>& terms,
                                            const Binning& binning, double threshold, const Eigen::VectorXd& strata) {
    const Eigen::Index n = conditioning.size();
    if (n == 0 || other.size() != n || (strata.size() && strata.size() != n))
        throw InvalidInputError("conditional_profile: length mismatch or empty sample");
    if (terms.empty()) throw ConfigError("conditional_profile: empty basis");

    ConditionalEigenProfile profile;
    profile.conditioning = label;
    profile.threshold = threshold;
    const bool two = is_two_term(terms);
    for (const auto& [stratum, index] : strata_groups(n, strata)) {
        for (const Cell& cell : bin_indices(conditioning, index, binning)) {
            std::vector<Row> rows;
            rows.reserve(cell.members.size());
            for (auto i : cell.members) rows.push_back({other(i), evaluate_terms(terms, other(i))});
            EigenCell out = summarize(rows, double(rows.size()) / n, binning, threshold, two);
            out.z1 = stratum;
            out.stratified = strata.size() > 0;
            out.lo = cell.lo;
            out.hi = cell.hi;
            out.representative = cell.representative;
            profile.cells.push_back(std::move(out));
        }
    }
    return profile;
}

ConditionalEigenProfile conditional_profile_x(const Dataset& data, const std::vector<Term>& q_terms,
                                              const Eigen::VectorXd& v, const Binning& binning, double threshold) {
    return conditional_profile("x", data.x, v, q_terms, binning, threshold);
}

ConditionalEigenProfile conditional_profile_v(const Dataset& data, const std::vector<Term>& p_terms,
                                              const Eigen::VectorXd& v, const Binning& binning, double threshold) {
    return conditional_profile("v", v, data.x, p_terms, binning, threshold);
}

PropensityReport propensity_check(const Dataset& data, const Eigen::VectorXd& v, const Binning& binning,
                                  double tolerance) {
    const Eigen::Index n = data.n();
    if (v.size() != n || n == 0) throw InvalidInputError("propensity_check: length mismatch or empty sample");
    for (Eigen::Index i = 0; i < n; ++i)
        if (data.x(i) != 0.0 && data.x(i) != 1.0)
            throw InvalidInputError("propensity_check: treatment must be binary (0/1); row " + std::to_string(i + 1) +
                                    " has x = " + std::to_string(data.x(i)));
    PropensityReport report;
    report.tolerance = tolerance;
    std::vector<Eigen::Index> all(n);
    std::iota(all.begin(), all.end(), Eigen::Index{0});
    for (const Cell& cell : bin_indices(v, all, binning)) {
        PropensityCell out;
        out.lo = cell.lo;
        out.hi = cell.hi;
        out.count = static_cast<Eigen::Index>(cell.members.size());
        out.probability = double(out.count) / n;
        double treated = 0.0;
        for (auto i : cell.members) treated += data.x(i);
        out.propensity = treated / out.count;
        out.variance = out.propensity * (1.0 - out.propensity);
        out.pass = out.propensity >= tolerance && out.propensity <= 1.0 - tolerance && out.variance > 0.0;
        if (out.pass) report.pass_probability += out.probability;
        report.cells.push_back(out);
    }
    report.pass = report.pass_probability > 0.0;
    return report;
}

std::vector<LambdaBound> lambda_bound_check(const ConditionalEigenProfile& profile) {
    std::vector<LambdaBound> out;
    for (const auto& cell : profile.cells) {
        LambdaBound b;
        b.min_eigenvalue = cell.min_eigenvalue;
        b.max_eigenvalue = cell.max_eigenvalue;
        b.applicable = cell.variance.has_value() && cell.second_moment.rows() == 2 && cell.max_eigenvalue > 0.0;
        if (b.applicable) {
            b.variance = *cell.variance;
            b.bound = b.variance / b.max_eigenvalue;
            b.margin = b.min_eigenvalue - b.bound;
            b.holds = b.margin >= -1e-10;
        }
        out.push_back(b);
    }
    return out;
}

TriangularProfiles triangular_profiles(const FirstStageFit& first_stage, const Dataset& data, const BasisSpec& basis,
                                       const Binning& binning, double threshold, int v_cells) {
    const Eigen::Index n = data.n();
    if (n == 0) throw InvalidInputError("triangular_profiles: empty sample");
    if (v_cells < 1) throw ConfigError("triangular_profiles: v_cells must be positive");
    const Eigen::VectorXd strata = basis.r_terms.size() > 1 ? data.z1 : Eigen::VectorXd();

    // Predicted first-stage quantile curves, one per distinct instrument pair.
    std::map<std::pair<double, double>, Eigen::VectorXd> curves;
    std::vector<const Eigen::VectorXd*> curve_of(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        auto key = std::make_pair(data.z(i), data.z1(i));
        auto it = curves.find(key);
        if (it == curves.end()) it = curves.emplace(key, first_stage.predicted_quantiles(key.first, key.second)).first;
        curve_of[i] = &it->second;
    }

    TriangularProfiles out;
    out.x_profile.conditioning = "x";
    out.x_profile.threshold = threshold;
    out.v_profile.conditioning = "v";
    out.v_profile.threshold = threshold;
    const bool q_two = is_two_term(basis.q_terms);
    const bool p_two = is_two_term(basis.p_terms);
    const auto& levels = first_stage.process.levels;

    for (const auto& [stratum, index] : strata_groups(n, strata)) {
        for (const Cell& cell : bin_indices(data.x, index, binning)) {
            std::vector<Row> rows;
            for (auto i : cell.members) {
                const double f = trimmed_indicator_integral(*curve_of[i], cell.representative, first_stage.epsilon);
                rows.push_back({f, evaluate_terms(basis.q_terms, f)});
            }
            EigenCell c = summarize(rows, double(rows.size()) / n, binning, threshold, q_two);
            c.z1 = stratum;
            c.stratified = strata.size() > 0;
            c.lo = cell.lo;
            c.hi = cell.hi;
            c.representative = cell.representative;
            out.x_profile.cells.push_back(std::move(c));
        }

        for (int k = 0; k < v_cells; ++k) {
            const double u = (k + 0.5) / v_cells;
            const auto t = std::min_element(levels.begin(), levels.end(),
                                            [u](double a, double b) { return std::abs(a - u) < std::abs(b - u); }) -
                           levels.begin();
            std::vector<Row> rows;
            for (auto i : index) {
                const double q = (*curve_of[i])(t);
                rows.push_back({q, evaluate_terms(basis.p_terms, q)});
            }
            EigenCell c = summarize(rows, double(rows.size()) / n / v_cells, binning, threshold, p_two);
            c.z1 = stratum;
            c.stratified = strata.size() > 0;
            c.lo = double(k) / v_cells;
            c.hi = double(k + 1) / v_cells;
            c.representative = levels[t];
            out.v_profile.cells.push_back(std::move(c));
        }
    }
    return out;
}

std::vector<InstrumentCell> instrument_cells(const Eigen::VectorXd& z, double thin_share, int max_cells) {
    std::map<double, Eigen::Index> counts;
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        ++counts[z(i)];
        if (static_cast<int>(counts.size()) > max_cells) return {};
    }
    std::vector<InstrumentCell> out;
    for (const auto& [value, count] : counts) {
        InstrumentCell c;
        c.value = value;
        c.count = count;
        c.share = double(count) / double(z.size());
        c.thin = c.share < thin_share;
        out.push_back(c);
    }
    return out;
}

bool IdentificationReport::identified() const {
    return moments.rank_ok &&
           (!triangular.x_profile.estimated_set().empty() || !triangular.v_profile.estimated_set().empty());
}

namespace {

void describe(std::ostringstream& os, const std::string& title, const ConditionalEigenProfile& p) {
    std::size_t usable = 0;
    for (const auto& c : p.cells) usable += c.usable;
    os << title << ": " << p.cells.size() << " cells (" << usable << " usable), " << p.estimated_set().size()
       << " with min eigenvalue >= " << p.threshold << ", probability " << p.set_probability() << "\n";
    for (const auto& c : p.cells) {
        os << "  ";
        if (c.stratified) os << "z1=" << c.z1 << " ";
        os << p.conditioning << " in [" << c.lo << ", " << c.hi << "]  n=" << c.count << "  lambda_min="
           << c.min_eigenvalue << (c.usable ? "" : "  (unusable: too few observations)")
           << (c.in_set ? "  pass" : "") << "\n";
    }
}

}  // namespace

std::string IdentificationReport::summary() const {
    std::ostringstream os;
    os << "moment matrix: dim " << moments.matrix.rows() << ", min eigenvalue " << moments.min_eigenvalue
       << ", max eigenvalue " << moments.max_eigenvalue << ", condition " << moments.condition_number
       << ", rank " << (moments.rank_ok ? "ok" : "FAILED") << " (threshold " << moments.threshold << ")\n";
    describe(os, "triangular x-profile", triangular.x_profile);
    describe(os, "triangular v-profile", triangular.v_profile);
    describe(os, "conditional profile given x", x_profile);
    describe(os, "conditional profile given v", v_profile);
    if (propensity) {
        os << "propensity: pass probability " << propensity->pass_probability << " (tolerance "
           << propensity->tolerance << ")" << (propensity->pass ? "" : "  FAILED") << "\n";
    } else {
        os << "propensity: not applicable (treatment is not binary)\n";
    }
    std::size_t applicable = 0, holds = 0;
    for (const auto& b : lambda_bounds) {
        applicable += b.applicable;
        holds += b.applicable && b.holds;
    }
    if (applicable)
        os << "eigenvalue bound: holds in " << holds << " of " << applicable << " cells\n";
    else
        os << "eigenvalue bound: not applicable (control basis is not two-term)\n";
    if (!instrument.empty()) {
        os << "instrument cells:";
        for (const auto& c : instrument) os << "  z=" << c.value << " (n=" << c.count << ", " << 100.0 * c.share << "%)";
        os << "\n";
        for (const auto& c : instrument)
            if (c.thin)
                os << "thin instrument cell: z=" << c.value << " holds " << 100.0 * c.share
                   << "% of the observations\n";
    }
    os << "identified: " << (identified() ? "yes" : "no") << "\n";
    return os.str();
}

IdentificationReport diagnose(const FirstStageFit& first_stage, const Dataset& data, const Eigen::VectorXd& v_hat,
                              const BasisSpec& basis, const DiagnosticsOptions& options) {
    IdentificationReport report;
    report.moments = moment_matrix(data, basis, v_hat);
    report.triangular = triangular_profiles(first_stage, data, basis, options.binning, options.threshold,
                                            options.v_cells);
    report.x_profile = conditional_profile_x(data, basis.q_terms, v_hat, options.binning, options.threshold);
    report.v_profile = conditional_profile_v(data, basis.p_terms, v_hat, options.binning, options.threshold);
    const bool binary = (data.x.array() == 0.0 || data.x.array() == 1.0).all();
    if (binary) report.propensity = propensity_check(data, v_hat, options.binning, options.propensity_tolerance);
    report.lambda_bounds = lambda_bound_check(report.x_profile);
    report.instrument = instrument_cells(data.z);
    return report;
}

}  // namespace cvqr
