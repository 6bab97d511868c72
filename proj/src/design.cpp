#include "cvqr/design.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

#include "cvqr/errors.hpp"
#include "cvqr/normal.hpp"

namespace cvqr {

namespace {

const char* variable_name(Variable var) {
    switch (var) {
        case Variable::X: return "x";
        case Variable::V: return "v";
        case Variable::Z1: return "z1";
        case Variable::Z: return "z";
    }
    return "?";
}

std::vector<Term> parse_list(const std::vector<std::string>& items, Variable var) {
    std::vector<Term> out;
    out.reserve(items.size());
    for (const auto& s : items) out.push_back(Term::parse(s, var));
    return out;
}

std::string product_name(const std::vector<const Term*>& parts) {
    std::string name;
    for (const Term* t : parts) {
        if (t->is_constant()) continue;
        if (!name.empty()) name += '*';
        name += t->name();
    }
    return name.empty() ? "1" : name;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string field;
    std::istringstream is(line);
    while (std::getline(is, field, ',')) fields.push_back(field);
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

std::string trim(std::string s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

double parse_number(const std::string& raw, long line, const char* column) {
    const std::string text = trim(raw);
    if (text.empty()) {
        throw InvalidInputError("line " + std::to_string(line) + ": blank field in column '" + column + "'");
    }
    double value = 0.0;
    const char* begin = text.data();
    const char* end = begin + text.size();
    if (*begin == '+') ++begin;
    const auto [ptr, ec] = std::from_chars(begin, end, value);
    if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
        throw InvalidInputError("line " + std::to_string(line) + ": cannot parse '" + text + "' in column '" +
                                column + "'");
    }
    return value;
}

}  // namespace

Term Term::parse(const std::string& raw, Variable var) {
    const std::string text = trim(raw);
    const std::string v = variable_name(var);
    Term t;
    t.var_ = var;
    t.name_ = text;
    if (text == "1") {
        t.kind_ = Kind::Constant;
        return t;
    }
    if (text == v) {
        t.kind_ = Kind::Power;
        t.power_ = 1;
        return t;
    }
    static const std::regex power_re(R"(^([a-z0-9]+)\^([0-9]+)$)");
    static const std::regex call_re(R"(^(log|exp|invnorm)\(([a-z0-9]+)\)$)");
    std::smatch m;
    if (std::regex_match(text, m, power_re) && m[1] == v) {
        t.kind_ = Kind::Power;
        t.power_ = std::stoi(m[2]);
        if (t.power_ < 1) throw ConfigError("basis term '" + text + "': power must be >= 1");
        return t;
    }
    if (std::regex_match(text, m, call_re) && m[2] == v) {
        t.kind_ = m[1] == "log" ? Kind::Log : m[1] == "exp" ? Kind::Exp : Kind::InvNormal;
        return t;
    }
    throw ConfigError("unknown basis term '" + text + "' for variable " + v);
}

double Term::operator()(double value) const {
    switch (kind_) {
        case Kind::Constant: return 1.0;
        case Kind::Power: return power_ == 1 ? value : std::pow(value, power_);
        case Kind::Log:
            if (!(value > 0.0)) throw DomainError("log term requires a positive argument");
            return std::log(value);
        case Kind::Exp: return std::exp(value);
        case Kind::InvNormal:
            if (!(value > 0.0 && value < 1.0)) {
                throw DomainError("invnorm term requires an argument in (0,1), got " + std::to_string(value));
            }
            return normal_quantile(value);
    }
    return 0.0;
}

BasisSpec BasisSpec::standard() { return from_strings({"1", "x"}, {"1", "invnorm(v)"}, {"1", "z1"}, {"1", "z"}); }

BasisSpec BasisSpec::from_strings(const std::vector<std::string>& p, const std::vector<std::string>& q,
                                  const std::vector<std::string>& r, const std::vector<std::string>& s) {
    BasisSpec spec;
    spec.p_terms = parse_list(p, Variable::X);
    spec.q_terms = parse_list(q, Variable::V);
    spec.r_terms = r.empty() ? parse_list({"1"}, Variable::Z1) : parse_list(r, Variable::Z1);
    spec.s_terms = parse_list(s, Variable::Z);
    spec.validate();
    return spec;
}

void BasisSpec::validate() const {
    auto check = [](const std::vector<Term>& terms, const char* label) {
        if (terms.empty()) throw ConfigError(std::string("basis list '") + label + "' is empty");
        if (!terms.front().is_constant()) {
            throw ConfigError(std::string("basis list '") + label + "' must start with the constant 1");
        }
        std::set<std::string> seen;
        for (const auto& t : terms) {
            if (!seen.insert(t.name()).second) {
                throw ConfigError(std::string("basis list '") + label + "' repeats term '" + t.name() + "'");
            }
        }
    };
    check(p_terms, "p");
    check(q_terms, "q");
    check(r_terms, "r");
    check(s_terms, "s");
}

std::vector<std::string> BasisSpec::w_names() const {
    std::vector<std::string> names;
    for (const auto& p : p_terms)
        for (const auto& r : r_terms)
            for (const auto& q : q_terms) names.push_back(product_name({&p, &r, &q}));
    return names;
}

std::vector<std::string> BasisSpec::first_stage_names() const {
    std::vector<std::string> names;
    for (const auto& s : s_terms)
        for (const auto& r : r_terms) names.push_back(product_name({&s, &r}));
    return names;
}

bool BasisSpec::uses_inverse_normal_v() const {
    return std::any_of(q_terms.begin(), q_terms.end(), [](const Term& t) { return t.kind() == Term::Kind::InvNormal; });
}

Eigen::VectorXd evaluate_terms(const std::vector<Term>& terms, double value) {
    Eigen::VectorXd out(static_cast<Eigen::Index>(terms.size()));
    for (size_t i = 0; i < terms.size(); ++i) out(static_cast<Eigen::Index>(i)) = terms[i](value);
    return out;
}

Eigen::VectorXd build_w(const BasisSpec& spec, double x, double z1, double v) {
    return kron(kron(evaluate_terms(spec.p_terms, x), evaluate_terms(spec.r_terms, z1)),
                evaluate_terms(spec.q_terms, v));
}

Eigen::VectorXd build_first_stage_row(const BasisSpec& spec, double z, double z1) {
    return kron(evaluate_terms(spec.s_terms, z), evaluate_terms(spec.r_terms, z1));
}

void Dataset::validate() const {
    const Eigen::Index n = y.size();
    if (x.size() != n || z.size() != n || z1.size() != n) throw InvalidInputError("dataset columns differ in length");
    if (!y.allFinite() || !x.allFinite() || !z.allFinite() || !z1.allFinite()) {
        throw InvalidInputError("dataset contains non-finite values");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (z1(i) != 0.0 && z1(i) != 1.0) {
            throw InvalidInputError("z1 must be binary {0,1}; row " + std::to_string(i + 1) + " has " +
                                    std::to_string(z1(i)));
        }
    }
}

Dataset Dataset::with_instrument(Eigen::VectorXd z_new) const {
    Dataset out = *this;
    out.z = std::move(z_new);
    out.validate();
    return out;
}

Eigen::MatrixXd first_stage_design(const BasisSpec& spec, const Dataset& data) {
    Eigen::MatrixXd X(data.n(), spec.first_stage_dim());
    for (Eigen::Index i = 0; i < data.n(); ++i) X.row(i) = build_first_stage_row(spec, data.z(i), data.z1(i));
    return X;
}

Eigen::MatrixXd second_stage_design(const BasisSpec& spec, const Dataset& data, const Eigen::VectorXd& v) {
    Eigen::MatrixXd W(data.n(), spec.w_dim());
    for (Eigen::Index i = 0; i < data.n(); ++i) W.row(i) = build_w(spec, data.x(i), data.z1(i), v(i));
    return W;
}

Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    long line_no = 0;
    if (!std::getline(in, line)) throw InvalidInputError("line 1: empty input, expected header y,x,z,z1");
    ++line_no;
    std::vector<std::string> header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    if (!header.empty() && header[0].rfind("\xEF\xBB\xBF", 0) == 0) header[0].erase(0, 3);
    if (header != std::vector<std::string>{"y", "x", "z", "z1"}) {
        throw InvalidInputError("line 1: header must be exactly 'y,x,z,z1'");
    }
    static constexpr const char* columns[] = {"y", "x", "z", "z1"};
    std::vector<double> cols[4];
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 4) {
            throw InvalidInputError("line " + std::to_string(line_no) + ": expected 4 fields, found " +
                                    std::to_string(fields.size()));
        }
        for (int c = 0; c < 4; ++c) cols[c].push_back(parse_number(fields[static_cast<size_t>(c)], line_no, columns[c]));
        if (cols[3].back() != 0.0 && cols[3].back() != 1.0) {
            throw InvalidInputError("line " + std::to_string(line_no) + ": z1 must be 0 or 1");
        }
    }
    Dataset data;
    auto to_vec = [](const std::vector<double>& v) {
        return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
    };
    data.y = to_vec(cols[0]);
    data.x = to_vec(cols[1]);
    data.z = to_vec(cols[2]);
    data.z1 = to_vec(cols[3]);
    if (data.n() == 0) throw InvalidInputError("dataset has no rows");
    data.validate();
    return data;
}

Dataset read_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInputError("cannot open dataset '" + path + "'");
    return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << "y,x,z,z1\n";
    char buf[4][32];
    for (Eigen::Index i = 0; i < data.n(); ++i) {
        const double vals[4] = {data.y(i), data.x(i), data.z(i), data.z1(i)};
        for (int c = 0; c < 4; ++c) {
            auto res = std::to_chars(buf[c], buf[c] + sizeof(buf[c]), vals[c]);
            *res.ptr = '\0';
        }
        out << buf[0] << ',' << buf[1] << ',' << buf[2] << ',' << buf[3] << '\n';
    }
}

double sample_quantile_type1(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) throw InvalidInputError("sample quantile of an empty sample");
    const auto n = static_cast<double>(sorted.size());
    auto j = static_cast<long>(std::ceil(n * p - 1e-12));
    j = std::clamp<long>(j, 1, static_cast<long>(sorted.size()));
    return sorted[static_cast<size_t>(j - 1)];
}

Eigen::VectorXd discretize_design1(const Eigen::VectorXd& z_star, int bins) {
    if (bins < 1) throw InvalidInputError("discretization needs M >= 1 bins");
    if (z_star.size() < bins) throw InvalidInputError("discretization needs at least M observations");
    std::vector<double> sorted(z_star.data(), z_star.data() + z_star.size());
    std::sort(sorted.begin(), sorted.end());
    std::vector<double> unique_values(sorted);
    const auto distinct = std::unique(unique_values.begin(), unique_values.end()) - unique_values.begin();
    if (bins > distinct) {
        throw InvalidInputError("degenerate bins: M = " + std::to_string(bins) + " exceeds the " +
                                std::to_string(distinct) + " distinct instrument values");
    }
    std::vector<double> edges(static_cast<size_t>(bins + 1));
    for (int m = 0; m <= bins; ++m) {
        edges[static_cast<size_t>(m)] = sample_quantile_type1(sorted, static_cast<double>(m) / bins);
    }
    const double top = edges.back();
    Eigen::VectorXd out(z_star.size());
    for (Eigen::Index i = 0; i < z_star.size(); ++i) {
        const double z = z_star(i);
        int m = bins - 1;
        if (z != top) {
            // largest m with edges[m] <= z, so z lies in [edges[m], edges[m+1])
            m = static_cast<int>(std::upper_bound(edges.begin(), edges.end() - 1, z) - edges.begin()) - 1;
            m = std::clamp(m, 0, bins - 1);
        }
        out(i) = edges[static_cast<size_t>(m)] + 0.5 * (edges[static_cast<size_t>(m + 1)] - edges[static_cast<size_t>(m)]);
    }
    return out;
}

Eigen::VectorXd discretize_design2(const Eigen::VectorXd& z_star, int bins) {
    if (bins < 1) throw InvalidInputError("discretization needs M >= 1 bins");
    if (z_star.size() == 0) throw InvalidInputError("discretization of an empty instrument");
    const double lo = z_star.minCoeff();
    const double hi = z_star.maxCoeff();
    if (!(hi > lo)) throw InvalidInputError("degenerate range: instrument is constant");
    std::vector<double> grid(static_cast<size_t>(bins + 1));
    for (int m = 0; m <= bins; ++m) grid[static_cast<size_t>(m)] = lo + (hi - lo) * static_cast<double>(m) / bins;
    grid.back() = hi;
    Eigen::VectorXd out(z_star.size());
    for (Eigen::Index i = 0; i < z_star.size(); ++i) {
        const double z = z_star(i);
        int m = bins - 1;
        if (z != hi) {
            m = static_cast<int>(std::upper_bound(grid.begin(), grid.end() - 1, z) - grid.begin()) - 1;
            m = std::clamp(m, 0, bins - 1);
        }
        out(i) = grid[static_cast<size_t>(m)] + 0.5 * (grid[static_cast<size_t>(m + 1)] - grid[static_cast<size_t>(m)]);
    }
    return out;
}

}  // namespace cvqr
