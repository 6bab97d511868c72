#include "cvqr/config.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <type_traits>

#include "cvqr/dgp.hpp"
#include "cvqr/errors.hpp"

namespace cvqr {

using nlohmann::json;

namespace {

// Walks one JSON object, consuming known keys; leftover keys are an error.
class Reader {
public:
    Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) throw ConfigError(where() + " must be an object");
    }

    void finish() const {
        for (const auto& [key, value] : j_.items())
            if (!seen_.count(key)) throw ConfigError("unknown config key '" + join(key) + "'");
    }

    bool has(const std::string& key) {
        seen_.insert(key);
        return j_.contains(key);
    }

    const json& at(const std::string& key) const { return j_.at(key); }
    std::string join(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void number(const std::string& key, double& out) {
        if (!has(key)) return;
        if (!at(key).is_number()) throw ConfigError(join(key) + " must be a number");
        out = at(key).get<double>();
    }

    template <typename Int>
    void integer(const std::string& key, Int& out) {
        if (!has(key)) return;
        const json& v = at(key);
        if (!v.is_number_integer()) throw ConfigError(join(key) + " must be an integer");
        if (v.is_number_unsigned()) {
            out = static_cast<Int>(v.get<std::uint64_t>());
        } else {
            const auto s = v.get<std::int64_t>();
            if (std::is_unsigned_v<Int> && s < 0) throw ConfigError(join(key) + " must be nonnegative");
            out = static_cast<Int>(s);
        }
    }

    void boolean(const std::string& key, bool& out) {
        if (!has(key)) return;
        if (!at(key).is_boolean()) throw ConfigError(join(key) + " must be true or false");
        out = at(key).get<bool>();
    }

    void string(const std::string& key, std::string& out) {
        if (!has(key)) return;
        if (!at(key).is_string()) throw ConfigError(join(key) + " must be a string");
        out = at(key).get<std::string>();
    }

    template <typename T>
    void list(const std::string& key, std::vector<T>& out) {
        if (!has(key)) return;
        const json& v = at(key);
        if (!v.is_array()) throw ConfigError(join(key) + " must be an array");
        std::vector<T> values;
        for (const auto& e : v) {
            if constexpr (std::is_same_v<T, std::string>) {
                if (!e.is_string()) throw ConfigError(join(key) + " must hold strings");
            } else if constexpr (std::is_integral_v<T>) {
                if (!e.is_number_integer()) throw ConfigError(join(key) + " must hold integers");
            } else {
                if (!e.is_number()) throw ConfigError(join(key) + " must hold numbers");
            }
            values.push_back(e.get<T>());
        }
        out = std::move(values);
    }

private:
    std::string where() const { return path_.empty() ? "config" : path_; }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

std::vector<std::string> names(const std::vector<Term>& terms) {
    std::vector<std::string> out;
    for (const auto& t : terms) out.push_back(t.name());
    return out;
}

}  // namespace

std::string to_string(DiscretizationSpec::Design design) {
    switch (design) {
        case DiscretizationSpec::Design::None: return "none";
        case DiscretizationSpec::Design::Design1: return "design1";
        case DiscretizationSpec::Design::Design2: return "design2";
    }
    return "none";
}

DiscretizationSpec::Design design_from_string(const std::string& text) {
    if (text == "none") return DiscretizationSpec::Design::None;
    if (text == "design1" || text == "1") return DiscretizationSpec::Design::Design1;
    if (text == "design2" || text == "2") return DiscretizationSpec::Design::Design2;
    throw ConfigError("unknown discretization design '" + text + "' (none, design1, design2)");
}

Eigen::VectorXd apply_discretization(const DiscretizationSpec& spec, const Eigen::VectorXd& z) {
    switch (spec.design) {
        case DiscretizationSpec::Design::None: return z;
        case DiscretizationSpec::Design::Design1: return discretize_design1(z, spec.bins);
        case DiscretizationSpec::Design::Design2: return discretize_design2(z, spec.bins);
    }
    return z;
}

void RunConfig::validate() const {
    try {
        pipeline.validate();
    } catch (const InvalidInputError& e) {
        throw ConfigError(e.what());  // region problems are configuration problems here
    }
    if (bands) bootstrap.validate();
    if (discretization.bins < 1) throw ConfigError("discretization.M must be at least 1");
    if (!(identification.threshold >= 0.0)) throw ConfigError("identification.B must be nonnegative");
    if (identification.binning.bins < 1) throw ConfigError("identification.bins must be at least 1");
    if (identification.binning.min_cell_factor < 0) throw ConfigError("identification.min_cell_factor must be >= 0");
    if (identification.v_cells < 1) throw ConfigError("identification.v_cells must be at least 1");
    if (!(identification.propensity_tolerance >= 0.0 && identification.propensity_tolerance < 0.5))
        throw ConfigError("identification.propensity_tolerance must lie in [0, 0.5)");
    if (n < 1) throw ConfigError("simulate.n must be positive");
    const auto presets_list = presets::names();
    if (std::find(presets_list.begin(), presets_list.end(), dgp) == presets_list.end())
        throw ConfigError("unknown DGP preset '" + dgp + "'");
    if (study.bins.empty()) throw ConfigError("study.M must not be empty");
    for (int m : study.bins)
        if (m < 1) throw ConfigError("study.M entries must be at least 1");
    if (study.seeds < 1) throw ConfigError("study.seeds must be at least 1");
}

RunConfig run_config_from_json(const json& j) {
    RunConfig c;
    {
        Reader top(j, "");
        top.string("input", c.input);
        top.string("output_dir", c.output_dir);
        top.integer("seed", c.seed);
        top.number("epsilon", c.pipeline.epsilon);
        top.integer("T", c.pipeline.grid_size);
        top.integer("S", c.pipeline.region.mesh_points);

        if (top.has("basis")) {
            Reader b(top.at("basis"), "basis");
            std::vector<std::string> p = names(c.pipeline.basis.p_terms), q = names(c.pipeline.basis.q_terms),
                                     r = names(c.pipeline.basis.r_terms), s = names(c.pipeline.basis.s_terms);
            b.list("p", p);
            b.list("q", q);
            b.list("r", r);
            b.list("s", s);
            b.finish();
            c.pipeline.basis = BasisSpec::from_strings(p, q, r, s);
        }
        if (top.has("region")) {
            Reader r(top.at("region"), "region");
            auto& reg = c.pipeline.region;
            std::vector<double> range{reg.x_quantile_lo, reg.x_quantile_hi};
            r.list("x_quantiles", range);
            if (range.size() != 2) throw ConfigError("region.x_quantiles must hold [lo, hi]");
            reg.x_quantile_lo = range[0];
            reg.x_quantile_hi = range[1];
            r.integer("x_points", reg.x_points);
            r.list("x_values", reg.x_values);
            r.list("p_levels", reg.p_levels);
            r.list("dsf_y_levels", reg.dsf_y_levels);
            std::string measure = reg.measure == Measure::Continuous ? "continuous" : "counting";
            r.string("measure", measure);
            if (measure == "continuous")
                reg.measure = Measure::Continuous;
            else if (measure == "counting")
                reg.measure = Measure::Counting;
            else
                throw ConfigError("region.measure must be 'continuous' or 'counting'");
            r.finish();
        }
        if (top.has("solver")) {
            Reader s(top.at("solver"), "solver");
            s.integer("max_interior_iterations", c.pipeline.solver.max_interior_iterations);
            s.number("gap_tolerance", c.pipeline.solver.gap_tolerance);
            s.integer("max_pivots", c.pipeline.solver.max_pivots);
            s.finish();
        }
        if (top.has("bootstrap")) {
            Reader b(top.at("bootstrap"), "bootstrap");
            b.boolean("enabled", c.bands);
            b.integer("replications", c.bootstrap.replications);
            b.number("level", c.bootstrap.level);
            b.string("weight_law", c.bootstrap.weight_law);
            b.integer("threads", c.bootstrap.threads);
            b.finish();
        }
        if (top.has("discretization")) {
            Reader d(top.at("discretization"), "discretization");
            std::string design = to_string(c.discretization.design);
            d.string("design", design);
            c.discretization.design = design_from_string(design);
            d.integer("M", c.discretization.bins);
            d.finish();
        }
        if (top.has("identification")) {
            Reader i(top.at("identification"), "identification");
            i.number("B", c.identification.threshold);
            i.integer("bins", c.identification.binning.bins);
            i.integer("min_cell_factor", c.identification.binning.min_cell_factor);
            i.integer("v_cells", c.identification.v_cells);
            i.number("propensity_tolerance", c.identification.propensity_tolerance);
            i.boolean("gate", c.identification_gate);
            i.finish();
        }
        if (top.has("simulate")) {
            Reader s(top.at("simulate"), "simulate");
            s.string("dgp", c.dgp);
            s.integer("n", c.n);
            s.finish();
        }
        if (top.has("study")) {
            Reader s(top.at("study"), "study");
            s.list("M", c.study.bins);
            std::vector<std::string> designs;
            for (auto d : c.study.designs) designs.push_back(to_string(d));
            s.list("designs", designs);
            c.study.designs.clear();
            for (const auto& d : designs) {
                const auto parsed = design_from_string(d);
                if (parsed == DiscretizationSpec::Design::None) throw ConfigError("study.designs cannot contain 'none'");
                c.study.designs.push_back(parsed);
            }
            s.integer("seeds", c.study.seeds);
            s.finish();
        }
        top.finish();
    }
    c.bootstrap.seed = c.seed;
    c.validate();
    return c;
}

json to_json(const RunConfig& c) {
    const auto& reg = c.pipeline.region;
    json j;
    j["input"] = c.input;
    j["output_dir"] = c.output_dir;
    j["seed"] = c.seed;
    j["epsilon"] = c.pipeline.epsilon;
    j["T"] = c.pipeline.grid_size;
    j["S"] = reg.mesh_points;
    j["basis"] = {{"p", names(c.pipeline.basis.p_terms)},
                  {"q", names(c.pipeline.basis.q_terms)},
                  {"r", names(c.pipeline.basis.r_terms)},
                  {"s", names(c.pipeline.basis.s_terms)}};
    j["region"] = {{"x_quantiles", {reg.x_quantile_lo, reg.x_quantile_hi}},
                   {"x_points", reg.x_points},
                   {"x_values", reg.x_values},
                   {"p_levels", reg.p_levels},
                   {"dsf_y_levels", reg.dsf_y_levels},
                   {"measure", reg.measure == Measure::Continuous ? "continuous" : "counting"}};
    j["solver"] = {{"max_interior_iterations", c.pipeline.solver.max_interior_iterations},
                   {"gap_tolerance", c.pipeline.solver.gap_tolerance},
                   {"max_pivots", c.pipeline.solver.max_pivots}};
    j["bootstrap"] = {{"enabled", c.bands},
                      {"replications", c.bootstrap.replications},
                      {"level", c.bootstrap.level},
                      {"weight_law", c.bootstrap.weight_law},
                      {"threads", c.bootstrap.threads}};
    j["discretization"] = {{"design", to_string(c.discretization.design)}, {"M", c.discretization.bins}};
    j["identification"] = {{"B", c.identification.threshold},
                           {"bins", c.identification.binning.bins},
                           {"min_cell_factor", c.identification.binning.min_cell_factor},
                           {"v_cells", c.identification.v_cells},
                           {"propensity_tolerance", c.identification.propensity_tolerance},
                           {"gate", c.identification_gate}};
    j["simulate"] = {{"dgp", c.dgp}, {"n", c.n}};
    std::vector<std::string> designs;
    for (auto d : c.study.designs) designs.push_back(to_string(d));
    j["study"] = {{"M", c.study.bins}, {"designs", designs}, {"seeds", c.study.seeds}};
    return j;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config file '" + path + "': " + e.what());
    }
    return run_config_from_json(j);
}

}  // namespace cvqr
