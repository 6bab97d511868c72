#pragma once

#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvqr/design.hpp"
#include "cvqr/first_stage.hpp"

namespace cvqr {

/// Sample second-moment matrix with its spectrum. A failed rank flag is a
/// reported state, never an exception.
struct MomentReport {
    Eigen::MatrixXd matrix;
    Eigen::VectorXd eigenvalues;  // ascending
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    double condition_number = 0.0;
    double threshold = 0.0;
    bool rank_ok = false;
    std::vector<std::string> names;
};

/// (1/n) sum_i w_i w_i'; the rank flag fails when the smallest eigenvalue is
/// below relative_threshold * trace / dim.
MomentReport moment_matrix(const Eigen::MatrixXd& rows, double relative_threshold = 1e-8);
MomentReport moment_matrix(const Dataset& data, const BasisSpec& basis, const Eigen::VectorXd& v,
                           double relative_threshold = 1e-8);

/// Conditioning on a variable: one cell per distinct value when there are at
/// most `bins` of them, otherwise type-1 quantile bins. Cells with fewer than
/// min_cell_factor * dim observations are reported as unusable.
struct Binning {
    int bins = 10;
    int min_cell_factor = 5;
};

struct EigenCell {
    double z1 = 0.0;              // stratum when r(z1) is non-constant
    bool stratified = false;
    double lo = 0.0;              // conditioning range [lo, hi]
    double hi = 0.0;
    double representative = 0.0;  // value the cell stands for
    Eigen::Index count = 0;
    double probability = 0.0;
    Eigen::MatrixXd second_moment;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    int distinct_values = 0;      // of the other variable within the cell
    std::optional<double> variance;  // two-term bases (1, t): Var(t | cell)
    bool usable = false;
    bool in_set = false;          // usable and min_eigenvalue >= threshold
};

struct ConditionalEigenProfile {
    std::string conditioning;  // "x" or "v"
    double threshold = 1e-3;
    std::vector<EigenCell> cells;

    /// Estimated starred set: usable cells with min eigenvalue >= threshold.
    std::vector<std::size_t> estimated_set() const;
    /// Usable cells where the other variable takes at least two values.
    std::vector<std::size_t> support_set() const;
    double set_probability() const;
    /// Same cells, membership recomputed at another threshold.
    ConditionalEigenProfile at_threshold(double B) const;
};

/// Cells of `conditioning`, per cell the spectrum of the mean of t(other) t(other)'.
ConditionalEigenProfile conditional_profile(const std::string& label, const Eigen::VectorXd& conditioning,
                                            const Eigen::VectorXd& other, const std::vector<Term>& terms,
                                            const Binning& binning, double threshold,
                                            const Eigen::VectorXd& strata = {});

/// E[q(V) q(V)' | X = x] over X cells.
ConditionalEigenProfile conditional_profile_x(const Dataset& data, const std::vector<Term>& q_terms,
                                              const Eigen::VectorXd& v, const Binning& binning = {},
                                              double threshold = 1e-3);

/// E[p(X) p(X)' | V = v] over V cells.
ConditionalEigenProfile conditional_profile_v(const Dataset& data, const std::vector<Term>& p_terms,
                                              const Eigen::VectorXd& v, const Binning& binning = {},
                                              double threshold = 1e-3);

struct PropensityCell {
    double lo = 0.0;
    double hi = 0.0;
    Eigen::Index count = 0;
    double probability = 0.0;
    double propensity = 0.0;
    double variance = 0.0;
    bool pass = false;
};

struct PropensityReport {
    std::vector<PropensityCell> cells;
    double tolerance = 0.01;
    double pass_probability = 0.0;
    bool pass = false;
};

/// P(V) = Pr(X = 1 | V) per V cell for a binary treatment. A cell passes when
/// tolerance <= P <= 1 - tolerance. Throws InvalidInputError for non-binary X.
PropensityReport propensity_check(const Dataset& data, const Eigen::VectorXd& v, const Binning& binning = {},
                                  double tolerance = 0.01);

struct LambdaBound {
    bool applicable = false;
    double min_eigenvalue = 0.0;
    double max_eigenvalue = 0.0;
    double variance = 0.0;
    double bound = 0.0;   // Var / lambda_max
    double margin = 0.0;  // lambda_min - bound
    bool holds = false;
};

/// lambda_min >= Var / lambda_max - 1e-10 for each two-term cell; other cells
/// are reported as not applicable.
std::vector<LambdaBound> lambda_bound_check(const ConditionalEigenProfile& profile);

struct TriangularProfiles {
    ConditionalEigenProfile x_profile;  // q(F_hat(x | Z)) given X = x
    ConditionalEigenProfile v_profile;  // p(Q_hat(v | Z)) over the marginal of Z
};

/// Both profiles computed from the first stage alone. X cells are evaluated at
/// the cell's representative x, so with discrete X the x-profile equals
/// conditional_profile_x on V_hat. The v-profile uses `v_cells` equally spaced
/// levels (midpoints of [0,1] deciles by default).
TriangularProfiles triangular_profiles(const FirstStageFit& first_stage, const Dataset& data, const BasisSpec& basis,
                                       const Binning& binning = {}, double threshold = 1e-3, int v_cells = 10);

/// Share of the sample at each instrument value, for discrete instruments.
struct InstrumentCell {
    double value = 0.0;
    Eigen::Index count = 0;
    double share = 0.0;
    bool thin = false;  // share below the thin threshold
};

/// Empty when z takes more than `max_cells` distinct values.
std::vector<InstrumentCell> instrument_cells(const Eigen::VectorXd& z, double thin_share = 0.10,
                                             int max_cells = 50);

struct DiagnosticsOptions {
    double threshold = 1e-3;
    Binning binning;
    double propensity_tolerance = 0.01;
    int v_cells = 10;
};

struct IdentificationReport {
    MomentReport moments;
    TriangularProfiles triangular;
    ConditionalEigenProfile x_profile;
    ConditionalEigenProfile v_profile;
    std::optional<PropensityReport> propensity;
    std::vector<LambdaBound> lambda_bounds;
    std::vector<InstrumentCell> instrument;

    /// Rank flag passes and at least one triangular set is nonempty.
    bool identified() const;
    std::string summary() const;
};

IdentificationReport diagnose(const FirstStageFit& first_stage, const Dataset& data, const Eigen::VectorXd& v_hat,
                              const BasisSpec& basis, const DiagnosticsOptions& options = {});

}  // namespace cvqr
