#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cvqr/bootstrap.hpp"
#include "cvqr/dgp.hpp"
#include "cvqr/errors.hpp"

using namespace cvqr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

PipelineSpec small_spec(const BasisSpec& basis) {
    PipelineSpec spec;
    spec.basis = basis;
    spec.grid_size = 99;
    spec.region.mesh_points = 199;
    return spec;
}

bool identical(const MatrixXd& a, const MatrixXd& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() && (a.array() == b.array()).all();
}

}  // namespace

TEST_CASE("exponential weights: unit mean and variance, reproducible per replication") {
    BootstrapConfig config;
    config.seed = 42;
    const VectorXd w = bootstrap_weights(config, 3, 200000);
    const double mean = w.mean();
    const double var = (w.array() - mean).square().mean();
    CHECK(mean == doctest::Approx(1.0).epsilon(0.01));
    CHECK(var == doctest::Approx(1.0).epsilon(0.03));
    CHECK((w.array() > 0.0).all());
    CHECK(identical(w, bootstrap_weights(config, 3, 200000)));
    CHECK_FALSE(identical(w, bootstrap_weights(config, 4, 200000)));
    config.seed = 43;
    CHECK_FALSE(identical(w, bootstrap_weights(config, 3, 200000)));
    config.weight_law = "constant";
    CHECK(bootstrap_weights(config, 0, 10) == VectorXd::Ones(10));
}

TEST_CASE("config validation") {
    BootstrapConfig c;
    c.replications = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.level = 1.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = {};
    c.weight_law = "poisson";
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("max-t band against a hand computation") {
    // One point, four draws around an estimate of 0.
    MatrixXd est = MatrixXd::Zero(1, 2);
    std::vector<MatrixXd> draws;
    for (double d : {-2.0, -1.0, 1.0, 2.0}) {
        MatrixXd m(1, 2);
        m << d, 10.0 * d;
        draws.push_back(m);
    }
    // Type-1 quartiles -2 and 1 give scale 3 / 1.349 in column 0 and 30 / 1.349 in column 1;
    // each draw's max-t is |d| * 1.349 / 3, and the 0.5 quantile is the second order statistic.
    double crit = 0.0;
    const Bands b = max_t_band(est, draws, 0.5, &crit);
    CHECK(crit == doctest::Approx(1.349 / 3.0));
    CHECK(b.upper(0, 0) == doctest::Approx(1.0));
    CHECK(b.lower(0, 1) == doctest::Approx(-10.0));
    CHECK(b.level == 0.5);
}

TEST_CASE("degenerate weights collapse the bands onto the estimate") {
    const DgpSpec dgp = presets::linear_binary(2);
    const auto sim = simulate(dgp, 400);
    const PipelineSpec spec = small_spec(dgp.basis);
    const auto point = fit_pipeline(sim.data, spec);
    BootstrapConfig config;
    config.replications = 2;
    config.weight_law = "constant";
    const auto result = run_bootstrap(sim.data, spec, point, config);
    for (const auto* e : {&result.estimates.dsf, &result.estimates.qsf, &result.estimates.asf}) {
        REQUIRE(e->bands);
        CHECK(identical(e->bands->lower, e->values));
        CHECK(identical(e->bands->upper, e->values));
    }
}

TEST_CASE("bands bracket the estimate, nest in the level, and are seed-deterministic") {
    const DgpSpec dgp = presets::linear_binary(3);
    const auto sim = simulate(dgp, 500);
    const PipelineSpec spec = small_spec(dgp.basis);
    const auto point = fit_pipeline(sim.data, spec);
    BootstrapConfig config;
    config.replications = 12;
    config.seed = 7;
    const auto a = run_bootstrap(sim.data, spec, point, config);
    CHECK(a.draws.failed.empty());
    CHECK(a.draws.qsf.size() == 12);

    const auto wide = attach_bands(point.estimates, a.draws, 0.95);
    for (auto [e, w] : {std::pair{&a.estimates.qsf, &wide.qsf}, {&a.estimates.asf, &wide.asf},
                        {&a.estimates.dsf, &wide.dsf}}) {
        CHECK((e->bands->lower.array() <= e->values.array()).all());
        CHECK((e->bands->upper.array() >= e->values.array()).all());
        CHECK((w->bands->lower.array() <= e->bands->lower.array()).all());
        CHECK((w->bands->upper.array() >= e->bands->upper.array()).all());
    }

    const auto b = run_bootstrap(sim.data, spec, point, config);
    CHECK(identical(a.estimates.qsf.bands->upper, b.estimates.qsf.bands->upper));
    CHECK(identical(a.estimates.asf.bands->lower, b.estimates.asf.bands->lower));
    CHECK(identical(a.estimates.dsf.bands->lower, b.estimates.dsf.bands->lower));

    config.threads = 3;
    const auto c = run_bootstrap(sim.data, spec, point, config);
    CHECK(identical(a.estimates.qsf.bands->upper, c.estimates.qsf.bands->upper));
    CHECK(identical(a.estimates.dsf.bands->lower, c.estimates.dsf.bands->lower));

    config.threads = 1;
    config.seed = 8;
    const auto d = run_bootstrap(sim.data, spec, point, config);
    CHECK_FALSE(identical(a.estimates.dsf.bands->lower, d.estimates.dsf.bands->lower));
}

TEST_CASE("failed replications are recorded and exhaust the budget") {
    const DgpSpec dgp = presets::linear_binary(4);
    const auto sim = simulate(dgp, 300);
    PipelineSpec spec = small_spec(dgp.basis);
    const auto point = fit_pipeline(sim.data, spec);
    spec.solver.max_pivots = 1;  // every refit stalls
    BootstrapConfig config;
    config.replications = 5;
    const auto draws = draw_bootstrap(sim.data, spec, point, config);
    CHECK(draws.failed.size() == 5);
    CHECK(draws.qsf.empty());
    CHECK(draws.failure_messages.front().find("pivots") != std::string::npos);
    try {
        run_bootstrap(sim.data, spec, point, config);
        FAIL("expected the failure budget to be exceeded");
    } catch (const NumericError& e) {
        CHECK(e.exit_code() == 4);
        CHECK(std::string(e.what()).find("5 of 5") != std::string::npos);
    }
}

TEST_CASE("deterministic outcome gives near-zero QSF and ASF bands") {
    const DgpSpec dgp = presets::deterministic_outcome(1);
    const auto sim = simulate(dgp, 1000);
    const PipelineSpec spec = small_spec(dgp.basis);
    const auto point = fit_pipeline(sim.data, spec);
    BootstrapConfig config;
    config.replications = 10;
    const auto result = run_bootstrap(sim.data, spec, point, config);
    CHECK((result.estimates.qsf.bands->upper - result.estimates.qsf.bands->lower).maxCoeff() < 0.02);
    CHECK((result.estimates.asf.bands->upper - result.estimates.asf.bands->lower).maxCoeff() < 0.02);
}
