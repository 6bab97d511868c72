#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "cvqr/dgp.hpp"
#include "cvqr/errors.hpp"
#include "cvqr/first_stage.hpp"
#include "cvqr/normal.hpp"
#include "cvqr/structural.hpp"

using namespace cvqr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double eps = 0.01;

SecondStageFit identity_fit(int T) {
    SecondStageFit fit;
    fit.epsilon = eps;
    fit.basis = BasisSpec::from_strings({"1"}, {"1"}, {}, {"1"});
    const auto grid = trimmed_grid(eps, T);
    fit.process.levels = grid;
    fit.process.coefficients = Eigen::Map<const MatrixXd>(grid.data(), 1, T);
    fit.process.objectives.assign(static_cast<size_t>(T), 0.0);
    return fit;
}

VectorXd tabulate(const VectorXd& mesh, double (*G)(double)) {
    VectorXd out(mesh.size());
    for (Eigen::Index s = 0; s < mesh.size(); ++s) out(s) = G(mesh(s));
    return out;
}

double delta_of(const VectorXd& mesh) { return (mesh(mesh.size() - 1) - mesh(0)) / double(mesh.size() - 1); }

// inf{y on the mesh : G(y) >= p}; below the mesh G is 0, above it 1.
double generalized_inverse(const VectorXd& G, const VectorXd& mesh, double p) {
    for (Eigen::Index s = 0; s < mesh.size(); ++s) if (G(s) >= p) return mesh(s);
    return mesh(mesh.size() - 1);
}

struct Fitted {
    SimulatedSample sample;
    SecondStageFit fit;
    ControlSample controls;
};

Fitted fit_dgp(const DgpSpec& spec, Eigen::Index n, int T) {
    Fitted f;
    f.sample = simulate(spec, n);
    const auto first = fit_first_stage(f.sample.data, spec.basis, eps, T);
    const VectorXd v_hat = control_values(first, f.sample.data);
    f.fit = fit_second_stage(f.sample.data, v_hat, spec.basis, eps, T);
    f.controls = {f.sample.data.z1, v_hat, {}};
    return f;
}

}  // namespace

TEST_CASE("dsf examples") {
    const auto fit = identity_fit(99);
    const ControlSample two{VectorXd::Zero(2), VectorXd::Constant(2, 0.4), {}};
    for (double y : {0.1, 0.5, 0.9}) {
        CHECK(dsf(fit, two, y, 1.0) == fit.crf_distribution(y, 1.0, 0.0, 0.4));
    }
    // CRF free of (z1, v): the average is that CRF
    const ControlSample mixed{(VectorXd(3) << 0, 1, 1).finished(), (VectorXd(3) << 0.1, 0.5, 0.9).finished(), {}};
    CHECK(dsf(fit, mixed, 0.3, 0.0) == doctest::Approx(fit.crf_distribution(0.3, 0.0, 0.0, 0.5)).epsilon(1e-15));
    CHECK_THROWS_AS(dsf(fit, two, std::nan(""), 0.0), InvalidInputError);
}

TEST_CASE("qsf of the uniform CDF is the identity") {
    const VectorXd mesh = outcome_mesh(0.0, 1.0, 599);
    const VectorXd G = tabulate(mesh, [](double y) { return y; });
    for (double p : {0.01, 0.1, 0.25, 0.5, 0.75, 0.99}) CHECK(std::abs(qsf(G, mesh, p, eps) - p) <= delta_of(mesh));
}

TEST_CASE("qsf of a symmetric normal CDF at the median") {
    const VectorXd mesh = outcome_mesh(-4.0, 4.0, 599);
    const VectorXd G = tabulate(mesh, normal_cdf);
    CHECK(std::abs(qsf(G, mesh, 0.5, eps)) <= delta_of(mesh));
}

TEST_CASE("qsf matches the generalized inverse of random step functions") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 300; ++rep) {
        const double lo = -3.0 + 6.0 * unit(rng), hi = lo + 0.5 + 4.0 * unit(rng);
        const VectorXd mesh = outcome_mesh(lo, hi, 50 + rep % 200);
        VectorXd G(mesh.size());
        double level = 0.0;
        for (Eigen::Index s = 0; s < G.size(); ++s) {
            if (unit(rng) < 0.2) level = std::min(1.0, level + 0.3 * unit(rng));
            G(s) = level;
        }
        G(G.size() - 1) = 1.0;
        for (double p : {0.05, 0.25, 0.5, 0.75, 0.95}) {
            CHECK(std::abs(qsf(G, mesh, p, eps) - generalized_inverse(G, mesh, p)) <= delta_of(mesh) + 1e-12);
        }
    }
}

TEST_CASE("qsf refuses levels outside the identified range") {
    const VectorXd mesh = outcome_mesh(0.0, 1.0, 11);
    const VectorXd G = mesh;
    CHECK_THROWS_AS(qsf(G, mesh, 0.005, eps), DomainError);
    CHECK_THROWS_AS(qsf(G, mesh, 0.995, eps), DomainError);
    CHECK_NOTHROW(qsf(G, mesh, eps, eps));
}

TEST_CASE("asf examples") {
    const VectorXd unit = outcome_mesh(0.0, 1.0, 599);
    CHECK(std::abs(asf_continuous(tabulate(unit, [](double y) { return y; }), unit) - 0.5) <= delta_of(unit));
    const double y0 = 2.3;
    const VectorXd wide = outcome_mesh(-1.0, 5.0, 599);
    VectorXd step(wide.size());
    for (Eigen::Index s = 0; s < wide.size(); ++s) step(s) = wide(s) >= y0 ? 1.0 : 0.0;
    CHECK(std::abs(asf_continuous(step, wide) - y0) <= delta_of(wide));
    // mesh away from zero
    const VectorXd shifted = outcome_mesh(10.0, 11.0, 599);
    CHECK(std::abs(asf_continuous(tabulate(shifted, [](double y) { return y - 10.0; }), shifted) - 10.5) <=
          delta_of(shifted));
    const VectorXd negative = outcome_mesh(-11.0, -10.0, 599);
    CHECK(std::abs(asf_continuous(tabulate(negative, [](double y) { return y + 11.0; }), negative) + 10.5) <=
          delta_of(negative));
}

TEST_CASE("asf equals the discrete sum on meshes straddling zero") {
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int rep = 0; rep < 200; ++rep) {
        const VectorXd mesh = outcome_mesh(-5.0 * unit(rng) - 0.01, 5.0 * unit(rng) + 0.01, 2 + rep * 3);
        VectorXd G(mesh.size());
        double level = 0.0;
        for (auto& g : G) g = level = std::min(1.0, level + 0.05 * unit(rng));
        const double delta = (mesh(mesh.size() - 1) - mesh(0)) / (mesh.size() - 1);
        long double total = 0.0L;
        for (Eigen::Index s = mesh.size() - 1; s >= 0; --s) total += (mesh(s) >= 0.0 ? 1.0L : 0.0L) - G(s);
        CHECK(std::abs(asf_continuous(G, mesh) - static_cast<double>(delta * total)) < 1e-12);
    }
}

TEST_CASE("counting-measure asf on an integer support") {
    // P(0)=0.2, P(1)=0.5, P(2)=0.3: mean 1.1.
    const VectorXd support = (VectorXd(3) << 0, 1, 2).finished();
    const VectorXd G = (VectorXd(3) << 0.2, 0.7, 1.0).finished();
    CHECK(asf_counting(G, support) == doctest::Approx(1.1));
    const VectorXd negative = (VectorXd(3) << -2, -1, 0).finished();
    CHECK(asf_counting(G, negative) == doctest::Approx(-0.9));
}

TEST_CASE("qsf and dsf are consistent and stable under mesh refinement") {
    for (double scale : {0.5, 1.0, 2.0}) {
        const auto G = [scale](double y) { return normal_cdf((y - 1.0) / scale); };
        const VectorXd coarse = outcome_mesh(-6.0, 8.0, 599), fine = outcome_mesh(-6.0, 8.0, 1199);
        VectorXd Gc(coarse.size()), Gf(fine.size());
        for (Eigen::Index s = 0; s < coarse.size(); ++s) Gc(s) = G(coarse(s));
        for (Eigen::Index s = 0; s < fine.size(); ++s) Gf(s) = G(fine(s));
        const double delta = delta_of(coarse);
        for (double p : {0.1, 0.25, 0.5, 0.75, 0.9}) {
            CHECK(std::abs(qsf(Gc, coarse, p, eps) - qsf(Gf, fine, p, eps)) <= 2 * delta);
        }
        CHECK(std::abs(asf_continuous(Gc, coarse) - asf_continuous(Gf, fine)) <= 2 * delta);
        // y* is the generalized inverse only where G steps up at y*
        for (Eigen::Index s = 50; s < coarse.size(); s += 97) {
            if (!(Gc(s) > Gc(s - 1))) continue;
            CHECK(std::abs(qsf(Gc, coarse, Gc(s), 0.0) - coarse(s)) <= delta);
        }
    }
}

TEST_CASE("region tables") {
    const DgpSpec spec = presets::linear_binary(3);
    const auto f = fit_dgp(spec, 600, 99);
    RegionSpec region;
    const EvaluationMesh mesh = make_mesh(f.sample.data, region);
    const VectorXd ys = VectorXd::LinSpaced(7, -1.0, 4.0);
    const auto est = evaluate_region(f.fit, f.controls, mesh, region.p_levels, ys);
    CHECK(est.qsf.values.rows() == 5);
    CHECK(est.qsf.values.cols() == 3);
    CHECK(est.asf.values.cols() == 1);
    CHECK(est.dsf.values.cols() == 7);
    for (Eigen::Index j = 0; j < 5; ++j) {
        for (Eigen::Index c = 1; c < 3; ++c) CHECK(est.qsf.values(j, c) >= est.qsf.values(j, c - 1));
        for (Eigen::Index c = 1; c < 7; ++c) CHECK(est.dsf.values(j, c) >= est.dsf.values(j, c - 1));
        CHECK(est.dsf.values.row(j).minCoeff() >= eps);
        CHECK(est.dsf.values.row(j).maxCoeff() <= 1 - eps);
    }

    RegionSpec single;
    single.x_values = {0.5};
    single.p_levels = {0.5};
    const auto one = evaluate_region(f.fit, f.controls, make_mesh(f.sample.data, single), single.p_levels, {});
    CHECK(one.qsf.values.rows() == 1);
    CHECK(one.qsf.values.cols() == 1);

    RegionSpec empty;
    empty.p_levels.clear();
    CHECK_THROWS_AS(make_mesh(f.sample.data, empty), InvalidInputError);

    RegionSpec counting;
    counting.measure = Measure::Counting;
    const auto c = evaluate_region(f.fit, f.controls, make_mesh(f.sample.data, counting), counting.p_levels, {});
    CHECK((c.qsf.values - est.qsf.values).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("interpolation across the x-grid") {
    StructuralFunctionEstimate e;
    e.x_grid = (VectorXd(3) << 0, 1, 3).finished();
    e.values = (MatrixXd(3, 1) << 1, 2, 6).finished();
    CHECK(e.interpolate(-1.0) == 1.0);
    CHECK(e.interpolate(0.5) == 1.5);
    CHECK(e.interpolate(2.0) == 4.0);
    CHECK(e.interpolate(9.0) == 6.0);
}

TEST_CASE("structural functions recover the linear model at n=5000") {
    // Y = e1 + e2 X, e1 = 0.5 + 0.8 V + U, e2 = 1.2 - 0.6 V + 0.4 U, X = 0.5 + Z + V.
    DgpSpec spec;
    spec.basis = BasisSpec::from_strings({"1", "x"}, {"1", "v"}, {}, {"1", "z"});
    spec.outcome = {{0.5, 1.0}, {0.8, 0.0}, {1.2, 0.4}, {-0.6, 0.0}};
    spec.outcome_law = LatentLaw::Uniform;
    spec.first_stage = {{0.5, 1.0}, {1.0, 0.0}};
    spec.first_stage_law = LatentLaw::Uniform;
    spec.instrument = {InstrumentSpec::Law::Bernoulli, 0.5, 0.0, 1.0};
    spec.seed = 1;
    const GroundTruth truth(spec);
    const auto closed_form = [](double x) { return 0.5 + 0.4 + 0.5 + (1.2 - 0.3 + 0.2) * x; };
    const auto f = fit_dgp(spec, 5000, 599);
    RegionSpec region;
    const EvaluationMesh mesh = make_mesh(f.sample.data, region);
    double worst_dsf = 0.0, worst_asf = 0.0;
    std::vector<double> ys(f.sample.data.y.data(), f.sample.data.y.data() + 5000);
    std::sort(ys.begin(), ys.end());
    VectorXd probes(5);
    for (int k = 0; k < 5; ++k) probes(k) = ys[static_cast<size_t>(500 + 1000 * k)];
    for (Eigen::Index j = 0; j < mesh.x_grid.size(); ++j) {
        const double x = mesh.x_grid(j);
        const VectorXd G = tabulate_dsf(f.fit, f.controls, x, probes);
        for (int k = 0; k < 5; ++k) worst_dsf = std::max(worst_dsf, std::abs(G(k) - truth.dsf(probes(k), x)));
        const VectorXd Gm = tabulate_dsf(f.fit, f.controls, x, mesh.y_mesh);
        CHECK(truth.asf(x) == doctest::Approx(closed_form(x)).epsilon(1e-9));
        worst_asf = std::max(worst_asf, std::abs(asf(Gm, mesh) - closed_form(x)));
    }
    MESSAGE("sup DSF error " << worst_dsf << ", sup ASF error " << worst_asf);
    CHECK(worst_dsf < 0.05);
    CHECK(worst_asf < 0.05);
}
