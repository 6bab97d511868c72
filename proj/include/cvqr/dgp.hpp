#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cvqr/design.hpp"

namespace cvqr {

/// Law of the latent index entering a coefficient curve: g(u) = u or invnorm(u).
enum class LatentLaw { Uniform, Normal };

/// beta(u) = intercept + loading * g(u).
struct CoefficientCurve {
    double intercept = 0.0;
    double loading = 0.0;
};

struct InstrumentSpec {
    enum class Law { Bernoulli, Uniform, Normal, Power };
    Law law = Law::Bernoulli;
    // Bernoulli: P(z = 1) = a. Uniform: [a, b]. Normal: mean a, sd b.
    // Power: a + (b - a) U^(1/shape), left-skewed for shape > 1.
    double a = 0.5;
    double b = 1.0;
    double shape = 1.0;
};

/// Heterogeneous-coefficients triangular model
///   X = sum_k pi_k(V) [s(Z) (x) r(Z1)]_k,       V ~ U(0,1) independent of Z
///   Y = sum_k beta_k(U) [p(X) (x) r(Z1) (x) q(V)]_k,  U ~ U(0,1) independent of (X, Z, V)
/// with the same U shared by every coefficient.
struct DgpSpec {
    BasisSpec basis;
    std::vector<CoefficientCurve> outcome;      // length |p||r||q|
    LatentLaw outcome_law = LatentLaw::Normal;
    std::vector<CoefficientCurve> first_stage;  // length |s||r|
    LatentLaw first_stage_law = LatentLaw::Normal;
    InstrumentSpec instrument;
    double z1_probability = 0.0;
    std::uint64_t seed = 1;

    void validate() const;
};

/// Population structural functions of a DgpSpec. The distribution over V is
/// integrated on a 10,001-point midpoint grid.
class GroundTruth {
public:
    explicit GroundTruth(DgpSpec spec, int v_grid = 10001);

    double dsf(double y, double x) const;
    double qsf(double p, double x) const;
    double asf(double x) const;

    /// Q_{Y|X,Z1,V}(u | x, z1, v).
    double crf_quantile(double u, double x, double z1, double v) const;
    /// F_{Y|X,Z1,V}(y | x, z1, v).
    double crf_distribution(double y, double x, double z1, double v) const;
    /// E[Y | X = x, Z1 = z1, V = v].
    double crf_mean(double x, double z1, double v) const;
    /// Q_{X|Z}(v | z, z1).
    double first_stage_quantile(double v, double z, double z1) const;
    /// F_{X|Z}(x | z, z1).
    double first_stage_distribution(double x, double z, double z1) const;
    /// beta(u) stacked in kronecker order.
    Eigen::VectorXd coefficients(double u) const;

    const DgpSpec& spec() const { return spec_; }

private:
    struct Slice {
        Eigen::VectorXd location;  // A over (z1, v) grid
        Eigen::VectorXd scale;     // C over (z1, v) grid
        Eigen::VectorXd mass;
    };
    Slice slice(double x) const;
    double dsf(const Slice& s, double y) const;

    DgpSpec spec_;
    Eigen::VectorXd loc_;
    Eigen::VectorXd load_;
    std::vector<double> v_grid_;
};

struct SimulatedSample {
    Dataset data;
    Eigen::VectorXd v;  // true control values
    Eigen::VectorXd u;  // outcome ranks
};

/// Draws n observations. Throws InvalidInputError("invalid DGP ...") when a
/// drawn support point makes a quantile map decreasing.
SimulatedSample simulate(const DgpSpec& spec, Eigen::Index n);

/// Uniforms strictly inside (0,1) from mt19937_64; the bit-to-double mapping
/// is fixed here so draws are identical across standard libraries.
class UniformStream {
public:
    explicit UniformStream(std::uint64_t seed);
    double operator()();

private:
    std::mt19937_64 engine_;
};

namespace presets {

/// Binary instrument, binary Z1, linear heterogeneous coefficients, standard basis.
DgpSpec linear_binary(std::uint64_t seed);
/// Y = e1 + e2 X with e_j linear in (V, U), both uniform; basis q = (1, v).
DgpSpec linear_uniform(std::uint64_t seed);
/// Same outcome with zero first-stage instrument loadings.
DgpSpec irrelevant_instrument(std::uint64_t seed);
/// Left-skewed continuous instrument (bottom half-range bin ~6% of mass).
DgpSpec continuous_instrument(std::uint64_t seed);
/// Y an exact linear function of X.
DgpSpec deterministic_outcome(std::uint64_t seed);

DgpSpec by_name(const std::string& name, std::uint64_t seed);
std::vector<std::string> names();

}  // namespace presets

}  // namespace cvqr
