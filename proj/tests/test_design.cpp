#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "cvqr/design.hpp"
#include "cvqr/errors.hpp"
#include "oracles.hpp"

using namespace cvqr;
using Eigen::VectorXd;

namespace {

VectorXd vec(std::initializer_list<double> v) {
    VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) out(i++) = x;
    return out;
}

// Observations share an output value iff they shared an input value's bin.
bool same_partition(const VectorXd& a, const VectorXd& b) {
    std::map<double, double> forward, backward;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        auto [f, fi] = forward.emplace(a(i), b(i));
        auto [g, gi] = backward.emplace(b(i), a(i));
        if (f->second != b(i) || g->second != a(i)) return false;
    }
    return true;
}

size_t distinct(const VectorXd& v) { return std::set<double>(v.data(), v.data() + v.size()).size(); }

// Hand enumeration of type-1 bins: value below Q(m/M) for the smallest such m.
VectorXd design1_oracle(const VectorXd& z, int M) {
    std::vector<double> sorted(z.data(), z.data() + z.size());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> edges;
    for (int m = 0; m <= M; ++m) edges.push_back(testing::order_statistic_quantile(sorted, double(m) / M));
    VectorXd out(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        int bin = M - 1;
        for (int m = 0; m < M; ++m) {
            if (z(i) >= edges[m] && z(i) < edges[m + 1]) {
                bin = m;
                break;
            }
        }
        out(i) = edges[bin] + 0.5 * (edges[bin + 1] - edges[bin]);
    }
    return out;
}

}  // namespace

TEST_CASE("build_w examples") {
    const BasisSpec spec = BasisSpec::standard();
    CHECK(spec.w_dim() == 8);
    const VectorXd a = build_w(spec, 0.0, 0.0, 0.5);
    CHECK(a.isApprox(vec({1, 0, 0, 0, 0, 0, 0, 0})));
    const VectorXd b = build_w(spec, 1.0, 1.0, 0.5);
    CHECK((b - vec({1, 0, 1, 0, 1, 0, 1, 0})).cwiseAbs().maxCoeff() == 0.0);
    CHECK(spec.w_names()[5] == "x*invnorm(v)");
}

TEST_CASE("build_w kronecker order and domain") {
    const BasisSpec spec = BasisSpec::standard();
    const double x = 1.7, z1 = 1.0, v = 0.3;
    const double g = -0.5244005127080407;  // invnorm(0.3)
    const VectorXd w = build_w(spec, x, z1, v);
    const VectorXd expected = vec({1, g, z1, z1 * g, x, x * g, x * z1, x * z1 * g});
    CHECK((w - expected).cwiseAbs().maxCoeff() < 1e-9);
    CHECK_THROWS_AS(build_w(spec, x, z1, 0.0), DomainError);
    CHECK_THROWS_AS(build_w(spec, x, z1, 1.0), DomainError);
    const BasisSpec linear = BasisSpec::from_strings({"1", "x"}, {"1", "v"}, {}, {"1", "z"});
    CHECK_NOTHROW(build_w(linear, x, 0.0, 1.0));
}

TEST_CASE("all-constant bases give a ones vector") {
    const BasisSpec spec = BasisSpec::from_strings({"1"}, {"1"}, {"1"}, {"1"});
    CHECK(build_w(spec, 3.0, 1.0, 0.2) == VectorXd::Ones(1));
    const BasisSpec wide = BasisSpec::from_strings({"1", "x", "x^2"}, {"1", "v"}, {"1", "z1"}, {"1", "z"});
    CHECK(build_w(wide, 0.0, 0.0, 0.0).size() == 12);
    CHECK(build_first_stage_row(wide, 2.0, 1.0).isApprox(vec({1, 1, 2, 2})));
}

TEST_CASE("basis parsing is strict") {
    CHECK_THROWS_AS(BasisSpec::from_strings({"x"}, {"1"}, {}, {"1"}), ConfigError);
    CHECK_THROWS_AS(BasisSpec::from_strings({"1", "sin(x)"}, {"1"}, {}, {"1"}), ConfigError);
    CHECK_THROWS_AS(BasisSpec::from_strings({"1", "x", "x"}, {"1"}, {}, {"1"}), ConfigError);
    CHECK_THROWS_AS(BasisSpec::from_strings({"1", "v"}, {"1"}, {}, {"1"}), ConfigError);
    CHECK(Term::parse("log(x)", Variable::X)(std::exp(2.0)) == doctest::Approx(2.0));
    CHECK(Term::parse("x^3", Variable::X)(2.0) == 8.0);
    CHECK_THROWS_AS(Term::parse("log(x)", Variable::X)(-1.0), DomainError);
}

TEST_CASE("design 1 examples") {
    const VectorXd z = vec({3, 0, 2, 1});
    CHECK(discretize_design1(z, 1) == VectorXd::Constant(4, 1.5));
    // Type-1 edges: Q(0)=0, Q(0.5)=1, Q(1)=3.
    const VectorXd two = discretize_design1(z, 2);
    CHECK(two == vec({2, 0.5, 2, 2}));
    CHECK(two == design1_oracle(z, 2));
    CHECK_THROWS_AS(discretize_design1(vec({1, 1, 2}), 3), InvalidInputError);
    const VectorXd tied = vec({2, 1, 3, 1, 2, 3, 1});
    CHECK(discretize_design1(tied, 2) == design1_oracle(tied, 2));
}

TEST_CASE("design 1 matches the enumeration oracle at the experimental M") {
    std::mt19937_64 rng(7);
    std::gamma_distribution<double> law(2.0, 1.0);
    for (int rep = 0; rep < 20; ++rep) {
        VectorXd z(200);
        for (auto& v : z) v = law(rng);
        for (int M : {2, 3, 5, 15}) {
            const VectorXd d = discretize_design1(z, M);
            CHECK(d == design1_oracle(z, M));
            CHECK(distinct(d) <= static_cast<size_t>(M));
        }
    }
}

TEST_CASE("design 2 examples") {
    VectorXd z = VectorXd::LinSpaced(11, 0.0, 10.0);
    const VectorXd d = discretize_design2(z, 5);
    CHECK(d(0) == 1.0);
    CHECK(d(10) == 9.0);
    VectorXd probe = z;
    probe(3) = 3.5;
    CHECK(discretize_design2(probe, 5)(3) == 3.0);
    CHECK(discretize_design2(z, 1) == VectorXd::Constant(11, 5.0));
    CHECK_THROWS_AS(discretize_design2(VectorXd::Constant(4, 2.0), 2), InvalidInputError);
}

TEST_CASE("design 2 keeps its partition when reapplied") {
    std::mt19937_64 rng(11);
    std::lognormal_distribution<double> law(0.0, 0.7);
    for (int rep = 0; rep < 30; ++rep) {
        VectorXd z(150);
        for (auto& v : z) v = law(rng);
        for (int M : {2, 3, 5, 15}) {
            const VectorXd d2 = discretize_design2(z, M);
            CHECK(distinct(d2) <= static_cast<size_t>(M));
            CHECK(d2.minCoeff() > z.minCoeff());
            CHECK(d2.maxCoeff() < z.maxCoeff());
            if (distinct(d2) > 1) CHECK(same_partition(d2, discretize_design2(d2, M)));
            CHECK(distinct(discretize_design1(z, M)) <= static_cast<size_t>(M));
        }
    }
}

TEST_CASE("discretizers are not idempotent") {
    // Design 2 midpoints move when the range shrinks.
    const VectorXd d2 = discretize_design2(VectorXd::LinSpaced(11, 0.0, 10.0), 5);
    CHECK(discretize_design2(d2, 5)(0) == 1.8);
    // Design 1 moves the midpoints too.
    const VectorXd once = discretize_design1(vec({0, 1, 2, 3}), 2);
    const VectorXd twice = discretize_design1(once, 2);
    CHECK(twice(0) == 1.25);
    CHECK(same_partition(once, twice));
    // On tied input the type-1 edges land on the top of each group, so the
    // lowest bin is empty and the two top groups merge.
    VectorXd tied(6);
    tied << 1, 1, 2, 2, 3, 3;
    const VectorXd merged = discretize_design1(tied, 3);
    CHECK(merged(2) == merged(4));
    CHECK(!same_partition(tied, merged));
}

TEST_CASE("csv round trip") {
    std::istringstream in("y,x,z,z1\n1.5,2,0.25,1\n-3,4e-2,1,0\n");
    const Dataset d = read_dataset_csv(in);
    REQUIRE(d.n() == 2);
    CHECK(d.y(1) == -3.0);
    CHECK(d.x(1) == 0.04);
    std::ostringstream out;
    write_dataset_csv(out, d);
    std::istringstream again(out.str());
    const Dataset e = read_dataset_csv(again);
    CHECK(e.y == d.y);
    CHECK(e.x == d.x);
    CHECK(e.z == d.z);
    CHECK(e.z1 == d.z1);
}

TEST_CASE("csv rejections name the line") {
    auto message = [](const std::string& text) {
        std::istringstream in(text);
        try {
            read_dataset_csv(in);
        } catch (const InvalidInputError& e) {
            CHECK(e.exit_code() == 2);
            return std::string(e.what());
        }
        return std::string("accepted");
    };
    CHECK(message("y,x,z,z1\n1,2,3,0\n1,,3,0\n").find("line 3") != std::string::npos);
    CHECK(message("y,x,z,z1\n1,2,3,0\n1,2,3,\n").find("line 3") != std::string::npos);
    CHECK(message("y,x,z,z1\n1,2,abc,0\n").find("line 2") != std::string::npos);
    CHECK(message("y,x,z,z1\n1,2,3,2\n").find("line 2") != std::string::npos);
    CHECK(message("y,x,z,z1\n1,2,3\n").find("line 2") != std::string::npos);
    CHECK(message("y,x,z\n1,2,3\n").find("line 1") != std::string::npos);
    CHECK(message("y,x,z,z1\n1,2,1e999,0\n") != "accepted");
    CHECK(message("y,x,z,z1\n") != "accepted");
}

TEST_CASE("type-1 sample quantile") {
    const std::vector<double> s{1, 2, 3, 4, 5};
    CHECK(sample_quantile_type1(s, 0.0) == 1.0);
    CHECK(sample_quantile_type1(s, 0.2) == 1.0);
    CHECK(sample_quantile_type1(s, 0.21) == 2.0);
    CHECK(sample_quantile_type1(s, 1.0) == 5.0);
}
