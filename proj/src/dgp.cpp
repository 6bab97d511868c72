#include "cvqr/dgp.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "cvqr/errors.hpp"
#include "cvqr/normal.hpp"

namespace cvqr {

namespace {

double latent(LatentLaw law, double u) { return law == LatentLaw::Uniform ? u : normal_quantile(u); }

double latent_inverse(LatentLaw law, double t) {
    return law == LatentLaw::Uniform ? std::clamp(t, 0.0, 1.0) : normal_cdf(t);
}

double latent_mean(LatentLaw law) { return law == LatentLaw::Uniform ? 0.5 : 0.0; }

// Location and loading of sum_k (a_k + c_k g) basis_k.
std::pair<double, double> combine(const std::vector<CoefficientCurve>& curves, const Eigen::VectorXd& basis) {
    double location = 0.0, loading = 0.0;
    for (Eigen::Index k = 0; k < basis.size(); ++k) {
        location += curves[static_cast<size_t>(k)].intercept * basis(k);
        loading += curves[static_cast<size_t>(k)].loading * basis(k);
    }
    return {location, loading};
}

}  // namespace

UniformStream::UniformStream(std::uint64_t seed) : engine_(seed) {}

double UniformStream::operator()() { return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53; }

void DgpSpec::validate() const {
    basis.validate();
    if (static_cast<Eigen::Index>(outcome.size()) != basis.w_dim()) {
        throw InvalidInputError("invalid DGP: outcome needs " + std::to_string(basis.w_dim()) + " coefficient curves");
    }
    if (static_cast<Eigen::Index>(first_stage.size()) != basis.first_stage_dim()) {
        throw InvalidInputError("invalid DGP: first stage needs " + std::to_string(basis.first_stage_dim()) +
                                " coefficient curves");
    }
    if (!(z1_probability >= 0.0 && z1_probability <= 1.0)) {
        throw InvalidInputError("invalid DGP: z1 probability outside [0,1]");
    }
    switch (instrument.law) {
        case InstrumentSpec::Law::Bernoulli:
            if (!(instrument.a >= 0.0 && instrument.a <= 1.0)) throw InvalidInputError("invalid DGP: Bernoulli p");
            break;
        case InstrumentSpec::Law::Uniform:
        case InstrumentSpec::Law::Power:
            if (!(instrument.b > instrument.a)) throw InvalidInputError("invalid DGP: instrument range");
            if (instrument.law == InstrumentSpec::Law::Power && !(instrument.shape > 0.0)) {
                throw InvalidInputError("invalid DGP: power shape must be positive");
            }
            break;
        case InstrumentSpec::Law::Normal:
            if (!(instrument.b > 0.0)) throw InvalidInputError("invalid DGP: instrument sd");
            break;
    }
}

GroundTruth::GroundTruth(DgpSpec spec, int v_grid) : spec_(std::move(spec)) {
    spec_.validate();
    v_grid_.resize(static_cast<size_t>(v_grid));
    for (int j = 0; j < v_grid; ++j) v_grid_[static_cast<size_t>(j)] = (j + 0.5) / v_grid;
}

GroundTruth::Slice GroundTruth::slice(double x) const {
    const auto& b = spec_.basis;
    const Eigen::VectorXd p = evaluate_terms(b.p_terms, x);
    const double p1 = spec_.z1_probability;
    std::vector<std::pair<double, double>> z1_support;  // (value, probability)
    if (p1 < 1.0) z1_support.emplace_back(0.0, 1.0 - p1);
    if (p1 > 0.0) z1_support.emplace_back(1.0, p1);

    const auto nv = static_cast<Eigen::Index>(v_grid_.size());
    const auto nq = static_cast<Eigen::Index>(b.q_terms.size());
    Eigen::MatrixXd q(nq, nv);
    for (Eigen::Index j = 0; j < nv; ++j) q.col(j) = evaluate_terms(b.q_terms, v_grid_[static_cast<size_t>(j)]);

    Slice s;
    const auto total = static_cast<Eigen::Index>(z1_support.size()) * nv;
    s.location.resize(total);
    s.scale.resize(total);
    s.mass.resize(total);
    Eigen::Index offset = 0;
    for (const auto& [z1, prob] : z1_support) {
        const Eigen::VectorXd pr = kron(p, evaluate_terms(b.r_terms, z1));
        Eigen::VectorXd alpha = Eigen::VectorXd::Zero(nq), gamma = Eigen::VectorXd::Zero(nq);
        for (Eigen::Index a = 0; a < pr.size(); ++a) {
            for (Eigen::Index c = 0; c < nq; ++c) {
                const auto& curve = spec_.outcome[static_cast<size_t>(a * nq + c)];
                alpha(c) += curve.intercept * pr(a);
                gamma(c) += curve.loading * pr(a);
            }
        }
        s.location.segment(offset, nv) = q.transpose() * alpha;
        s.scale.segment(offset, nv) = q.transpose() * gamma;
        s.mass.segment(offset, nv).setConstant(prob / static_cast<double>(nv));
        offset += nv;
    }
    return s;
}

double GroundTruth::dsf(const Slice& s, double y) const {
    double total = 0.0;
    for (Eigen::Index j = 0; j < s.mass.size(); ++j) {
        const double c = s.scale(j);
        const double f = c > 0.0 ? latent_inverse(spec_.outcome_law, (y - s.location(j)) / c)
                                 : (y >= s.location(j) ? 1.0 : 0.0);
        total += s.mass(j) * f;
    }
    return total;
}

double GroundTruth::dsf(double y, double x) const { return dsf(slice(x), y); }

double GroundTruth::qsf(double p, double x) const {
    if (!(p > 0.0 && p < 1.0)) throw DomainError("true QSF requires p in (0,1)");
    const Slice s = slice(x);
    const double g_lo = latent(spec_.outcome_law, 1e-12);
    const double g_hi = latent(spec_.outcome_law, 1.0 - 1e-12);
    double lo = (s.location + g_lo * s.scale).minCoeff() - 1.0;
    double hi = (s.location + g_hi * s.scale).maxCoeff() + 1.0;
    for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        if (dsf(s, mid) >= p) hi = mid; else lo = mid;
    }
    return hi;
}

double GroundTruth::asf(double x) const {
    const Slice s = slice(x);
    return s.mass.dot(s.location + latent_mean(spec_.outcome_law) * s.scale);
}

double GroundTruth::crf_quantile(double u, double x, double z1, double v) const {
    const auto [a, c] = combine(spec_.outcome, build_w(spec_.basis, x, z1, v));
    return a + c * latent(spec_.outcome_law, u);
}

double GroundTruth::crf_distribution(double y, double x, double z1, double v) const {
    const auto [a, c] = combine(spec_.outcome, build_w(spec_.basis, x, z1, v));
    return c > 0.0 ? latent_inverse(spec_.outcome_law, (y - a) / c) : (y >= a ? 1.0 : 0.0);
}

double GroundTruth::crf_mean(double x, double z1, double v) const {
    const auto [a, c] = combine(spec_.outcome, build_w(spec_.basis, x, z1, v));
    return a + c * latent_mean(spec_.outcome_law);
}

double GroundTruth::first_stage_quantile(double v, double z, double z1) const {
    const auto [a, c] = combine(spec_.first_stage, build_first_stage_row(spec_.basis, z, z1));
    return a + c * latent(spec_.first_stage_law, v);
}

double GroundTruth::first_stage_distribution(double x, double z, double z1) const {
    const auto [a, c] = combine(spec_.first_stage, build_first_stage_row(spec_.basis, z, z1));
    return c > 0.0 ? latent_inverse(spec_.first_stage_law, (x - a) / c) : (x >= a ? 1.0 : 0.0);
}

Eigen::VectorXd GroundTruth::coefficients(double u) const {
    const double g = latent(spec_.outcome_law, u);
    Eigen::VectorXd beta(static_cast<Eigen::Index>(spec_.outcome.size()));
    for (size_t k = 0; k < spec_.outcome.size(); ++k) {
        beta(static_cast<Eigen::Index>(k)) = spec_.outcome[k].intercept + spec_.outcome[k].loading * g;
    }
    return beta;
}

SimulatedSample simulate(const DgpSpec& spec, Eigen::Index n) {
    spec.validate();
    if (n < 1) throw InvalidInputError("simulate needs n >= 1");
    UniformStream uniform(spec.seed);
    SimulatedSample out;
    auto& d = out.data;
    d.y.resize(n);
    d.x.resize(n);
    d.z.resize(n);
    d.z1.resize(n);
    out.v.resize(n);
    out.u.resize(n);
    const auto& ins = spec.instrument;
    for (Eigen::Index i = 0; i < n; ++i) {
        const double v = uniform();
        const double e = uniform();
        double z = 0.0;
        switch (ins.law) {
            case InstrumentSpec::Law::Bernoulli: z = e < ins.a ? 1.0 : 0.0; break;
            case InstrumentSpec::Law::Uniform: z = ins.a + (ins.b - ins.a) * e; break;
            case InstrumentSpec::Law::Normal: z = ins.a + ins.b * normal_quantile(e); break;
            case InstrumentSpec::Law::Power: z = ins.a + (ins.b - ins.a) * std::pow(e, 1.0 / ins.shape); break;
        }
        const double z1 = uniform() < spec.z1_probability ? 1.0 : 0.0;
        const double u = uniform();

        const auto [fa, fc] = combine(spec.first_stage, build_first_stage_row(spec.basis, z, z1));
        if (fc < -1e-12) {
            throw InvalidInputError("invalid DGP: first-stage quantile map decreasing in v at observation " +
                                    std::to_string(i));
        }
        const double x = fa + fc * latent(spec.first_stage_law, v);
        const auto [ya, yc] = combine(spec.outcome, build_w(spec.basis, x, z1, v));
        if (yc < -1e-12) {
            throw InvalidInputError("invalid DGP: outcome quantile map decreasing in u at observation " +
                                    std::to_string(i));
        }
        d.y(i) = ya + yc * latent(spec.outcome_law, u);
        d.x(i) = x;
        d.z(i) = z;
        d.z1(i) = z1;
        out.v(i) = v;
        out.u(i) = u;
    }
    return out;
}

namespace presets {

namespace {

// Outcome: Y = 1 + 0.5 g(U) + 0.4 invnorm(V) + 0.3 Z1 + 0.8 X + 0.2 X invnorm(V).
std::vector<CoefficientCurve> standard_outcome() {
    std::vector<CoefficientCurve> c(8);
    c[0] = {1.0, 0.5};  // 1
    c[1] = {0.4, 0.0};  // invnorm(v)
    c[2] = {0.3, 0.0};  // z1
    c[4] = {0.8, 0.0};  // x
    c[5] = {0.2, 0.0};  // x*invnorm(v)
    return c;
}

// First stage over (1, z1, z, z*z1): X = 0.3 Z1 + Z + (1 + 0.5 Z) g(V).
std::vector<CoefficientCurve> binary_first_stage(double strength) {
    std::vector<CoefficientCurve> c(4);
    c[0] = {0.0, 1.0};
    c[1] = {0.3, 0.0};
    c[2] = {strength, 0.5 * strength};
    return c;
}

}  // namespace

DgpSpec linear_binary(std::uint64_t seed) {
    DgpSpec s;
    s.basis = BasisSpec::standard();
    s.outcome = standard_outcome();
    s.first_stage = binary_first_stage(1.0);
    s.instrument = {InstrumentSpec::Law::Bernoulli, 0.5, 0.0, 1.0};
    s.z1_probability = 0.4;
    s.seed = seed;
    return s;
}

DgpSpec irrelevant_instrument(std::uint64_t seed) {
    DgpSpec s = linear_binary(seed);
    s.first_stage = binary_first_stage(0.0);
    return s;
}

DgpSpec continuous_instrument(std::uint64_t seed) {
    DgpSpec s = linear_binary(seed);
    s.instrument = {InstrumentSpec::Law::Power, 0.0, 2.0, 6.0};
    std::vector<CoefficientCurve> c(4);
    c[0] = {0.0, 0.5};
    c[1] = {0.3, 0.0};
    c[2] = {1.5, 0.0};
    s.first_stage = c;
    return s;
}

DgpSpec linear_uniform(std::uint64_t seed) {
    DgpSpec s;
    s.basis = BasisSpec::from_strings({"1", "x"}, {"1", "v"}, {"1", "z1"}, {"1", "z"});
    // e1 = 0.5 + 0.8 V + 0.3 Z1 + U, e2 = 1 + 0.6 V + 0.4 U, Y = e1 + e2 X.
    s.outcome.assign(8, CoefficientCurve{});
    s.outcome[0] = {0.5, 1.0};
    s.outcome[1] = {0.8, 0.0};
    s.outcome[2] = {0.3, 0.0};
    s.outcome[4] = {1.0, 0.4};
    s.outcome[5] = {0.6, 0.0};
    s.outcome_law = LatentLaw::Uniform;
    // X = 0.3 Z1 + Z + (1 + 0.5 Z) V.
    s.first_stage.assign(4, CoefficientCurve{});
    s.first_stage[0] = {0.0, 1.0};
    s.first_stage[1] = {0.3, 0.0};
    s.first_stage[2] = {1.0, 0.5};
    s.first_stage_law = LatentLaw::Uniform;
    s.instrument = {InstrumentSpec::Law::Bernoulli, 0.5, 0.0, 1.0};
    s.z1_probability = 0.4;
    s.seed = seed;
    return s;
}

DgpSpec deterministic_outcome(std::uint64_t seed) {
    DgpSpec s = linear_binary(seed);
    s.outcome.assign(8, CoefficientCurve{});
    s.outcome[0] = {1.0, 0.0};
    s.outcome[4] = {0.8, 0.0};
    return s;
}

DgpSpec by_name(const std::string& name, std::uint64_t seed) {
    if (name == "linear-binary") return linear_binary(seed);
    if (name == "irrelevant-instrument") return irrelevant_instrument(seed);
    if (name == "continuous-instrument") return continuous_instrument(seed);
    if (name == "linear-uniform") return linear_uniform(seed);
    if (name == "deterministic") return deterministic_outcome(seed);
    throw ConfigError("unknown DGP preset '" + name + "'");
}

std::vector<std::string> names() {
    return {"linear-binary", "linear-uniform", "irrelevant-instrument", "continuous-instrument", "deterministic"};
}

}  // namespace presets

}  // namespace cvqr
