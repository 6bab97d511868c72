#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include <unsupported/Eigen/KroneckerProduct>

#include "cvqr/dgp.hpp"
#include "cvqr/errors.hpp"
#include "cvqr/first_stage.hpp"
#include "cvqr/identification.hpp"

using namespace cvqr;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

Dataset sample(const VectorXd& x, const VectorXd& z) {
    Dataset d;
    d.y = VectorXd::Zero(x.size());
    d.x = x;
    d.z = z;
    d.z1 = VectorXd::Zero(x.size());
    return d;
}

std::vector<Term> terms(const std::vector<std::string>& names, Variable var) {
    std::vector<Term> out;
    for (const auto& n : names) out.push_back(Term::parse(n, var));
    return out;
}

// Continuous x, v with v partly driven by x.
std::pair<Dataset, VectorXd> random_pair(std::uint64_t seed, Eigen::Index n) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> unif(0.02, 0.98);
    std::normal_distribution<double> normal;
    VectorXd x(n), v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i) = normal(rng);
        v(i) = std::clamp(0.5 * unif(rng) + 0.25 + 0.1 * x(i), 0.01, 0.99);
    }
    return {sample(x, VectorXd::Zero(n)), v};
}

bool subset(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    return std::includes(b.begin(), b.end(), a.begin(), a.end());
}

}  // namespace

TEST_CASE("two-point control gives the closed-form eigenvalue") {
    // V in {0, 1} with equal mass: E[q q'] = [[1, 1/2], [1/2, 1/2]].
    const Eigen::Index n = 100;
    VectorXd v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = double(i % 2);
    const Dataset d = sample(VectorXd::Ones(n), VectorXd::Zero(n));
    const auto profile = conditional_profile_x(d, terms({"1", "v"}, Variable::V), v);
    REQUIRE(profile.cells.size() == 1);
    CHECK(profile.cells[0].min_eigenvalue == doctest::Approx((3.0 - std::sqrt(5.0)) / 4.0).epsilon(1e-12));
    CHECK(profile.cells[0].max_eigenvalue == doctest::Approx((3.0 + std::sqrt(5.0)) / 4.0).epsilon(1e-12));
    CHECK(*profile.cells[0].variance == doctest::Approx(0.25));
    CHECK(profile.support_set().size() == 1);
    CHECK(profile.estimated_set().size() == 1);
}

TEST_CASE("degenerate control is flagged, not thrown") {
    const Eigen::Index n = 60;
    const Dataset d = sample(VectorXd::LinSpaced(n, 0.0, 1.0), VectorXd::Zero(n));
    const auto profile = conditional_profile_x(d, terms({"1", "v"}, Variable::V), VectorXd::Constant(n, 0.4));
    CHECK(profile.estimated_set().empty());
    CHECK(profile.support_set().empty());
    for (const auto& c : profile.cells) CHECK(c.min_eigenvalue < 1e-12);

    MatrixXd rows(n, 3);
    rows.col(0).setOnes();
    rows.col(1) = VectorXd::LinSpaced(n, 0.0, 1.0);
    rows.col(2) = 2.0 * rows.col(1);
    const MomentReport collinear = moment_matrix(rows);
    CHECK_FALSE(collinear.rank_ok);
    rows.col(2) = rows.col(1).array().square();
    CHECK(moment_matrix(rows).rank_ok);
}

TEST_CASE("binning: distinct values, quantile bins, unusable cells") {
    auto [d, v] = random_pair(3, 2000);
    const auto q = terms({"1", "invnorm(v)"}, Variable::V);
    const auto profile = conditional_profile_x(d, q, v);
    CHECK(profile.cells.size() == 10);
    double total = 0.0;
    for (const auto& c : profile.cells) {
        total += c.probability;
        CHECK(c.lo <= c.representative);
        CHECK(c.representative <= c.hi);
        CHECK(c.usable);
    }
    CHECK(total == doctest::Approx(1.0));

    // Three distinct values; one of them with 4 observations < 5 * dim.
    VectorXd x(44);
    for (Eigen::Index i = 0; i < 44; ++i) x(i) = i < 20 ? 0.0 : (i < 40 ? 1.0 : 2.0);
    VectorXd vv = VectorXd::LinSpaced(44, 0.05, 0.95);
    const auto small = conditional_profile_x(sample(x, VectorXd::Zero(44)), q, vv);
    REQUIRE(small.cells.size() == 3);
    CHECK(small.cells[0].usable);
    CHECK_FALSE(small.cells[2].usable);
    CHECK_FALSE(small.cells[2].in_set);
    CHECK(small.cells[2].count == 4);
}

TEST_CASE("eigenvalue range and nesting in the threshold") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto [d, v] = random_pair(seed, 600);
        for (const auto& names : {std::vector<std::string>{"1", "invnorm(v)"}, {"1", "v", "v^2"}}) {
            const auto profile = conditional_profile_x(d, terms(names, Variable::V), v);
            for (const auto& c : profile.cells) {
                const double bound = c.second_moment.trace() / c.second_moment.rows();
                CHECK(c.min_eigenvalue >= 0.0);
                CHECK(c.min_eigenvalue <= bound * (1 + 1e-12));
            }
            std::vector<std::size_t> previous = profile.at_threshold(0.0).estimated_set();
            for (double B : {1e-4, 1e-3, 1e-2, 0.05, 0.2}) {
                const auto current = profile.at_threshold(B).estimated_set();
                CHECK(subset(current, previous));
                previous = current;
            }
        }
    }
}

TEST_CASE("kronecker moment equals the within-cell assembly for discrete x") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> unif(0.01, 0.99);
    std::discrete_distribution<int> xs({0.2, 0.5, 0.3});
    const Eigen::Index n = 900;
    VectorXd x(n), v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        x(i) = xs(rng) - 0.5;
        v(i) = unif(rng);
    }
    const Dataset d = sample(x, VectorXd::Zero(n));
    const BasisSpec basis = BasisSpec::from_strings({"1", "x"}, {"1", "invnorm(v)"}, {}, {"1", "z"});
    const MomentReport full = moment_matrix(d, basis, v);
    CHECK(full.names == basis.w_names());

    const auto profile = conditional_profile_x(d, basis.q_terms, v);
    MatrixXd assembled = MatrixXd::Zero(4, 4);
    for (const auto& c : profile.cells) {
        const VectorXd p = evaluate_terms(basis.p_terms, c.representative);
        assembled += c.probability * Eigen::kroneckerProduct(p * p.transpose(), c.second_moment).eval();
    }
    CHECK((assembled - full.matrix).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("eigenvalue bound holds and implies set membership") {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        auto [d, v] = random_pair(seed, 500);
        const auto profile = conditional_profile_x(d, terms({"1", "invnorm(v)"}, Variable::V), v);
        const auto bounds = lambda_bound_check(profile);
        REQUIRE(bounds.size() == profile.cells.size());
        const double B = 0.02;
        const auto tight = profile.at_threshold(B);
        for (std::size_t c = 0; c < bounds.size(); ++c) {
            REQUIRE(bounds[c].applicable);
            CHECK(bounds[c].holds);
            CHECK(bounds[c].margin >= -1e-10);
            // Cells in the support set whose variance clears B * lambda_max are in the estimated set.
            if (profile.cells[c].usable && profile.cells[c].distinct_values >= 2 &&
                bounds[c].variance >= B * bounds[c].max_eigenvalue)
                CHECK(tight.cells[c].in_set);
        }
    }
    auto [d, v] = random_pair(1, 300);
    const auto wide = conditional_profile_x(d, terms({"1", "v", "v^2"}, Variable::V), v);
    for (const auto& b : lambda_bound_check(wide)) CHECK_FALSE(b.applicable);
}

TEST_CASE("propensity check") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Eigen::Index n = 2000;
    VectorXd x(n), v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v(i) = 0.005 + 0.99 * unif(rng);
        // deterministic treatment in the bottom decile of v
        x(i) = v(i) < 0.1 ? 0.0 : double(unif(rng) < v(i));
    }
    const Dataset d = sample(x, VectorXd::Zero(n));
    const auto report = propensity_check(d, v);
    CHECK(report.pass);
    REQUIRE(report.cells.size() == 10);
    CHECK_FALSE(report.cells[0].pass);
    CHECK(report.cells[5].propensity == doctest::Approx(0.55).epsilon(0.15));

    const auto profile = conditional_profile_v(d, terms({"1", "x"}, Variable::X), v);
    REQUIRE(profile.cells.size() == report.cells.size());
    for (std::size_t c = 0; c < report.cells.size(); ++c) {
        if (report.cells[c].pass) CHECK(profile.cells[c].min_eigenvalue > 0.0);
        CHECK(*profile.cells[c].variance == doctest::Approx(report.cells[c].variance).epsilon(1e-12));
    }

    Dataset bad = d;
    bad.x(7) = 0.5;
    CHECK_THROWS_AS(propensity_check(bad, v), InvalidInputError);
}

TEST_CASE("triangular profiles: relevant and irrelevant instruments") {
    const double B = 0.01;
    const DiagnosticsOptions options{B, {}, 0.01, 10};
    {
        const auto sim = simulate(presets::linear_binary(1), 5000);
        const auto fit = fit_first_stage(sim.data, presets::linear_binary(1).basis, 0.01, 599);
        const VectorXd v_hat = control_values(fit, sim.data);
        const auto report = diagnose(fit, sim.data, v_hat, presets::linear_binary(1).basis, options);
        CHECK_FALSE(report.triangular.v_profile.estimated_set().empty());
        CHECK(report.moments.rank_ok);
        CHECK(report.identified());
        CHECK_FALSE(report.propensity.has_value());
        CHECK(report.summary().find("identified: yes") != std::string::npos);
        for (const auto& c : report.triangular.v_profile.cells) CHECK(c.stratified);
    }
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
        const DgpSpec spec = presets::irrelevant_instrument(seed);
        const auto sim = simulate(spec, 5000);
        const auto fit = fit_first_stage(sim.data, spec.basis, 0.01, 599);
        const VectorXd v_hat = control_values(fit, sim.data);
        const auto report = diagnose(fit, sim.data, v_hat, spec.basis, options);
        CHECK(report.triangular.x_profile.estimated_set().empty());
        CHECK(report.triangular.v_profile.estimated_set().empty());
        CHECK_FALSE(report.identified());
        CHECK(report.summary().find("identified: no") != std::string::npos);
    }
}

TEST_CASE("triangular x-profile equals the conditional profile on V_hat for discrete x") {
    std::mt19937_64 rng(13);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const Eigen::Index n = 1500;
    VectorXd x(n), z(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        z(i) = double(unif(rng) < 0.5);
        x(i) = z(i) + double(unif(rng) < 0.6) + double(unif(rng) < 0.3);
    }
    const Dataset d = sample(x, z);
    const BasisSpec basis = BasisSpec::from_strings({"1", "x"}, {"1", "invnorm(v)"}, {}, {"1", "z"});
    const auto fit = fit_first_stage(d, basis, 0.01, 199);
    const VectorXd v_hat = control_values(fit, d);
    const auto tri = triangular_profiles(fit, d, basis);
    const auto direct = conditional_profile_x(d, basis.q_terms, v_hat);
    REQUIRE(tri.x_profile.cells.size() == direct.cells.size());
    for (std::size_t c = 0; c < direct.cells.size(); ++c) {
        CHECK(tri.x_profile.cells[c].representative == direct.cells[c].representative);
        CHECK(std::abs(tri.x_profile.cells[c].min_eigenvalue - direct.cells[c].min_eigenvalue) < 1e-12);
        CHECK((tri.x_profile.cells[c].second_moment - direct.cells[c].second_moment).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK(tri.v_profile.cells.size() == 10);
    double mass = 0.0;
    for (const auto& c : tri.v_profile.cells) mass += c.probability;
    CHECK(mass == doctest::Approx(1.0));
}
