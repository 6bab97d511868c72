#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cvqr {

/// Variable a basis term is a transformation of.
enum class Variable { X, V, Z1, Z };

/// One named scalar transformation: `1`, `x`, `x^3`, `log(x)`, `invnorm(v)`, `exp(z)`.
class Term {
public:
    enum class Kind { Constant, Power, Log, Exp, InvNormal };

    /// Parses a term over `var`; throws ConfigError on unknown syntax.
    static Term parse(const std::string& text, Variable var);

    double operator()(double value) const;
    const std::string& name() const { return name_; }
    Kind kind() const { return kind_; }
    Variable variable() const { return var_; }
    bool is_constant() const { return kind_ == Kind::Constant; }

    friend bool operator==(const Term& a, const Term& b) { return a.name_ == b.name_ && a.var_ == b.var_; }

private:
    std::string name_;
    Variable var_ = Variable::X;
    Kind kind_ = Kind::Constant;
    int power_ = 1;
};

/// Transformation vectors p(x), q(v), r(z1), s(z). Each list starts with the constant.
struct BasisSpec {
    std::vector<Term> p_terms;
    std::vector<Term> q_terms;
    std::vector<Term> r_terms;
    std::vector<Term> s_terms;

    /// p = (1, x), q = (1, invnorm(v)), r = (1, z1), s = (1, z).
    static BasisSpec standard();
    /// Builds from term strings; empty `r` means r = (1).
    static BasisSpec from_strings(const std::vector<std::string>& p, const std::vector<std::string>& q,
                                  const std::vector<std::string>& r, const std::vector<std::string>& s);

    void validate() const;

    Eigen::Index w_dim() const { return static_cast<Eigen::Index>(p_terms.size() * r_terms.size() * q_terms.size()); }
    Eigen::Index first_stage_dim() const { return static_cast<Eigen::Index>(s_terms.size() * r_terms.size()); }

    /// Names of w = p (x) r (x) q in kronecker order, e.g. "x*invnorm(v)".
    std::vector<std::string> w_names() const;
    std::vector<std::string> first_stage_names() const;

    bool uses_inverse_normal_v() const;

    friend bool operator==(const BasisSpec&, const BasisSpec&) = default;
};

/// Kronecker product of two column vectors, a-major.
template <typename DerivedA, typename DerivedB>
Eigen::VectorXd kron(const Eigen::MatrixBase<DerivedA>& a, const Eigen::MatrixBase<DerivedB>& b) {
    Eigen::VectorXd out(a.size() * b.size());
    for (Eigen::Index i = 0; i < a.size(); ++i) out.segment(i * b.size(), b.size()) = a(i) * b;
    return out;
}

Eigen::VectorXd evaluate_terms(const std::vector<Term>& terms, double value);

/// w(x, z1, v) = p(x) (x) r(z1) (x) q(v). Throws DomainError for v outside (0,1)
/// when q contains invnorm(v).
Eigen::VectorXd build_w(const BasisSpec& spec, double x, double z1, double v);

/// s(z) (x) r(z1), the first-stage regressor.
Eigen::VectorXd build_first_stage_row(const BasisSpec& spec, double z, double z1);

/// Observed sample (y, x, z, z1).
struct Dataset {
    Eigen::VectorXd y;
    Eigen::VectorXd x;
    Eigen::VectorXd z;
    Eigen::VectorXd z1;

    Eigen::Index n() const { return y.size(); }
    void validate() const;
    Dataset with_instrument(Eigen::VectorXd z_new) const;
};

Eigen::MatrixXd first_stage_design(const BasisSpec& spec, const Dataset& data);
Eigen::MatrixXd second_stage_design(const BasisSpec& spec, const Dataset& data, const Eigen::VectorXd& v);

/// CSV with header `y,x,z,z1`. Blank fields and malformed numbers raise
/// InvalidInputError naming the 1-based line.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv(const std::string& path);
void write_dataset_csv(std::ostream& out, const Dataset& data);

/// Type-1 sample quantile: the ceil(n p)-th order statistic, minimum at p = 0.
double sample_quantile_type1(const std::vector<double>& sorted, double p);

/// Quantile-bin discretization: bins [Q(m/M), Q((m+1)/M)) mapped to midpoints,
/// the maximum observation to the top bin's midpoint.
Eigen::VectorXd discretize_design1(const Eigen::VectorXd& z_star, int bins);

/// Equispaced-bin discretization over [min, max] mapped to midpoints.
Eigen::VectorXd discretize_design2(const Eigen::VectorXd& z_star, int bins);

}  // namespace cvqr
