#include "cvqr/qr_solver.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <sstream>

namespace cvqr {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Deterministic value in +-[0.5, 1] used to break ties between residuals.
double tie_breaker(std::uint64_t i) {
    std::uint64_t z = i + 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    const double unit = static_cast<double>(z >> 11) * 0x1.0p-53;
    return (unit < 0.5) ? -(0.5 + unit) : unit;
}

double max_step(const VectorXd& value, const VectorXd& delta) {
    double step = std::numeric_limits<double>::infinity();
    for (Index i = 0; i < value.size(); ++i) {
        if (delta(i) < 0.0) step = std::min(step, -value(i) / delta(i));
    }
    return step;
}

// Frisch-Newton interior point for the dual of the check-loss LP
//   max y'a  s.t.  X'a = (1 - level) X'1,  0 <= a <= 1,
// solved with Mehrotra predictor-corrector steps. Returns primal coefficients.
VectorXd interior_point(const MatrixXd& X, const VectorXd& y, double level, const SolverOptions& options) {
    const Index n = X.rows();
    constexpr double step_fraction = 0.99995;

    const VectorXd c = -y;
    const VectorXd b = (1.0 - level) * X.transpose() * VectorXd::Ones(n);

    VectorXd x = VectorXd::Constant(n, 1.0 - level);
    VectorXd s = VectorXd::Constant(n, level);
    VectorXd dual = (X.transpose() * X).ldlt().solve(X.transpose() * c);
    VectorXd r = c - X * dual;
    const double offset = std::max(1e-3 * r.cwiseAbs().mean(), 1e-8);
    VectorXd z = r.cwiseMax(0.0).array() + offset;
    VectorXd w = (-r).cwiseMax(0.0).array() + offset;

    double gap = c.dot(x) - b.dot(dual) + w.sum();
    for (int it = 0; it < options.max_interior_iterations; ++it) {
        if (gap < options.gap_tolerance * (1.0 + std::abs(c.dot(x)))) break;

        const VectorXd q = (z.array() / x.array() + w.array() / s.array()).inverse();
        r = z - w;
        const MatrixXd normal = X.transpose() * q.asDiagonal() * X;
        const Eigen::LDLT<MatrixXd> ldlt(normal);

        VectorXd ddual = ldlt.solve(X.transpose() * q.cwiseProduct(r));
        VectorXd dx = q.cwiseProduct(X * ddual - r);
        VectorXd ds = -dx;
        VectorXd dz = -z.cwiseProduct((dx.array() / x.array() + 1.0).matrix());
        VectorXd dw = -w.cwiseProduct((ds.array() / s.array() + 1.0).matrix());

        double fp = std::min(1.0, step_fraction * std::min(max_step(x, dx), max_step(s, ds)));
        double fd = std::min(1.0, step_fraction * std::min(max_step(z, dz), max_step(w, dw)));

        if (std::min(fp, fd) < 1.0) {
            double mu = z.dot(x) + w.dot(s);
            const double g = (z + fd * dz).dot(x + fp * dx) + (w + fd * dw).dot(s + fp * ds);
            mu = mu * std::pow(g / mu, 3) / (2.0 * static_cast<double>(n));

            const VectorXd dxdz = dx.cwiseProduct(dz);
            const VectorXd dsdw = ds.cwiseProduct(dw);
            const VectorXd xinv = x.cwiseInverse();
            const VectorXd sinv = s.cwiseInverse();
            const VectorXd xi = mu * (xinv - sinv);
            const VectorXd correction = dxdz.cwiseProduct(xinv) - dsdw.cwiseProduct(sinv);

            ddual = ldlt.solve(X.transpose() * q.cwiseProduct(r - xi + correction));
            dx = q.cwiseProduct(X * ddual + xi - r - correction);
            ds = -dx;
            dz = (mu * xinv - z - z.cwiseProduct(dx).cwiseProduct(xinv) - dxdz.cwiseProduct(xinv)).eval();
            dw = (mu * sinv - w - w.cwiseProduct(ds).cwiseProduct(sinv) - dsdw.cwiseProduct(sinv)).eval();

            fp = std::min(1.0, step_fraction * std::min(max_step(x, dx), max_step(s, ds)));
            fd = std::min(1.0, step_fraction * std::min(max_step(z, dz), max_step(w, dw)));
        }

        x += fp * dx;
        s += fp * ds;
        dual += fd * ddual;
        z += fd * dz;
        w += fd * dw;
        gap = c.dot(x) - b.dot(dual) + w.sum();
    }
    return -dual;
}

// Exact vertex search on the weighted check-loss polyhedron. Rows with zero
// weight are dropped on construction; basis indices refer to compact rows.
class VertexSolver {
public:
    VertexSolver(const MatrixXd& design, const VectorXd& responses, const VectorXd& weights) {
        std::vector<Index> keep;
        for (Index i = 0; i < design.rows(); ++i) {
            if (weights.size() == 0 || weights(i) > 0.0) keep.push_back(i);
        }
        const Index n = static_cast<Index>(keep.size());
        X_.resize(n, design.cols());
        y_.resize(n);
        w_.resize(n);
        for (Index j = 0; j < n; ++j) {
            X_.row(j) = design.row(keep[j]);
            y_(j) = responses(keep[j]);
            w_(j) = weights.size() ? weights(keep[j]) : 1.0;
        }
        original_rows_ = std::move(keep);

        const double scale = std::max(1.0, y_.size() ? y_.cwiseAbs().maxCoeff() : 1.0);
        y_perturbed_ = y_;
        for (Index i = 0; i < n; ++i) y_perturbed_(i) += 1e-11 * scale * tie_breaker(static_cast<std::uint64_t>(i));

        weight_sum_ = w_.sum();
        x_max_ = X_.size() ? X_.cwiseAbs().maxCoeff() : 1.0;
    }

    Index rows() const { return X_.rows(); }
    Index cols() const { return X_.cols(); }

    std::vector<Index> cold_start(double level, const SolverOptions& options) const {
        const MatrixXd Xw = w_.asDiagonal() * X_;
        const VectorXd yw = w_.cwiseProduct(y_);
        const VectorXd beta = interior_point(Xw, yw, level, options);
        const VectorXd residual = (y_ - X_ * beta).cwiseAbs();
        std::vector<Index> order(static_cast<size_t>(rows()));
        for (Index i = 0; i < rows(); ++i) order[static_cast<size_t>(i)] = i;
        std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) { return residual(a) < residual(b); });
        return select_independent(order);
    }

    QuantileFit descend(std::vector<Index> basis, double level, const SolverOptions& options) const {
        const Index n = rows();
        const Index k = cols();
        const long max_pivots = options.max_pivots > 0 ? options.max_pivots : 50 * static_cast<long>(n) + 1000;

        std::vector<char> in_basis(static_cast<size_t>(n), 0);
        MatrixXd B(k, k);
        MatrixXd B_inv(k, k);
        VectorXd beta(k);
        VectorXd residual(n);
        VectorXd psi(n);
        VectorXd direction(k);
        VectorXd slope_along(n);
        std::vector<Index> degenerate;

        const double tol_base = 1e-11 * weight_sum_ * x_max_;

        for (long pivot = 0;; ++pivot) {
            std::fill(in_basis.begin(), in_basis.end(), 0);
            for (Index j = 0; j < k; ++j) {
                B.row(j) = X_.row(basis[static_cast<size_t>(j)]);
                in_basis[static_cast<size_t>(basis[static_cast<size_t>(j)])] = 1;
            }
            const Eigen::PartialPivLU<MatrixXd> lu(B);
            B_inv = lu.inverse();
            VectorXd yb(k);
            for (Index j = 0; j < k; ++j) yb(j) = y_perturbed_(basis[static_cast<size_t>(j)]);
            beta = B_inv * yb;
            residual = y_perturbed_ - X_ * beta;

            // Non-basis rows sitting on the hyperplane (perturbed ties that
            // collapsed in floating point) get a one-sided slope per edge below.
            degenerate.clear();
            const double beta_scale = beta.cwiseAbs().maxCoeff();
            for (Index i = 0; i < n; ++i) {
                if (in_basis[static_cast<size_t>(i)]) {
                    residual(i) = 0.0;
                    psi(i) = 0.0;
                } else if (std::abs(residual(i)) <=
                           64.0 * std::numeric_limits<double>::epsilon() *
                               (std::abs(y_perturbed_(i)) + x_max_ * beta_scale * static_cast<double>(k))) {
                    residual(i) = 0.0;
                    psi(i) = 0.0;
                    degenerate.push_back(i);
                } else {
                    psi(i) = w_(i) * (residual(i) < 0.0 ? level - 1.0 : level);
                }
            }
            const VectorXd gradient = X_.transpose() * psi;
            const VectorXd dual = B_inv.transpose() * gradient;

            // Most negative normalised directional derivative over the 2k edges.
            Index leave = -1;
            double sign = 0.0;
            double best = 0.0;
            double best_raw = 0.0;
            for (Index j = 0; j < k; ++j) {
                const double wj = w_(basis[static_cast<size_t>(j)]);
                const double norm = B_inv.col(j).norm();
                const double tol = tol_base * std::max(norm, 1e-300);
                double up = -dual(j) + wj * (1.0 - level);
                double down = dual(j) + wj * level;
                for (Index i : degenerate) {
                    // residual moves by -t a along +B_inv.col(j)
                    const double a = X_.row(i).dot(B_inv.col(j));
                    up += w_(i) * std::abs(a) * (a < 0.0 ? level : 1.0 - level);
                    down += w_(i) * std::abs(a) * (a > 0.0 ? level : 1.0 - level);
                }
                if (up < -tol && up / norm < best) {
                    best = up / norm;
                    best_raw = up;
                    leave = j;
                    sign = 1.0;
                }
                if (down < -tol && down / norm < best) {
                    best = down / norm;
                    best_raw = down;
                    leave = j;
                    sign = -1.0;
                }
            }

            if (leave < 0) return finish(basis, level, true);
            if (pivot >= max_pivots) {
                QuantileFit partial = finish(basis, level, false);
                throw ConvergenceError("check-loss vertex search exceeded " + std::to_string(max_pivots) +
                                           " pivots at level " + std::to_string(level),
                                       partial.coefficients, partial.objective);
            }

            direction = sign * B_inv.col(leave);
            slope_along = X_ * direction;

            using Breakpoint = std::pair<double, double>;  // (step, slope increment)
            std::vector<Breakpoint> points;
            points.reserve(static_cast<size_t>(n / 2 + 1));
            std::vector<Index> owners;
            for (Index i = 0; i < n; ++i) {
                if (in_basis[static_cast<size_t>(i)] || residual(i) == 0.0) continue;
                const double a = slope_along(i);
                if (a == 0.0) continue;
                const double t = residual(i) / a;
                if (t > 0.0) points.emplace_back(t, static_cast<double>(i));
            }
            auto later = [](const Breakpoint& lhs, const Breakpoint& rhs) { return lhs.first > rhs.first; };
            std::make_heap(points.begin(), points.end(), later);

            double slope = best_raw;
            Index enter = -1;
            while (!points.empty()) {
                std::pop_heap(points.begin(), points.end(), later);
                const Index i = static_cast<Index>(points.back().second);
                points.pop_back();
                slope += w_(i) * std::abs(slope_along(i));
                if (slope >= 0.0) {
                    enter = i;
                    break;
                }
            }
            if (enter < 0) throw NumericError("check-loss objective unbounded along an edge; design is degenerate");
            basis[static_cast<size_t>(leave)] = enter;
        }
    }

    /// Greedy pick of k linearly independent rows in the given priority order.
    std::vector<Index> select_independent(const std::vector<Index>& order) const {
        const Index k = cols();
        std::vector<Index> chosen;
        MatrixXd Q(k, k);
        Index m = 0;
        for (Index i : order) {
            VectorXd v = X_.row(i).transpose();
            const double norm0 = v.norm();
            if (norm0 == 0.0) continue;
            for (int pass = 0; pass < 2; ++pass) {
                for (Index j = 0; j < m; ++j) v -= Q.col(j).dot(v) * Q.col(j);
            }
            const double norm = v.norm();
            if (norm > 1e-9 * norm0) {
                Q.col(m++) = v / norm;
                chosen.push_back(i);
                if (m == k) break;
            }
        }
        if (m < k) throw NumericError("could not find a nonsingular basis; design is rank deficient");
        return chosen;
    }

    std::vector<Index> to_original(const std::vector<Index>& basis) const {
        std::vector<Index> out;
        out.reserve(basis.size());
        for (Index j : basis) out.push_back(original_rows_[static_cast<size_t>(j)]);
        return out;
    }

private:
    QuantileFit finish(const std::vector<Index>& basis, double level, bool converged) const {
        const Index k = cols();
        MatrixXd B(k, k);
        VectorXd yb(k);
        for (Index j = 0; j < k; ++j) {
            B.row(j) = X_.row(basis[static_cast<size_t>(j)]);
            yb(j) = y_(basis[static_cast<size_t>(j)]);
        }
        QuantileFit out;
        out.coefficients = B.partialPivLu().solve(yb);
        out.objective = weighted_check_loss(y_, X_, out.coefficients, level, w_);
        out.level = level;
        out.converged = converged;
        out.basis = basis;
        return out;
    }

    MatrixXd X_;
    VectorXd y_;
    VectorXd y_perturbed_;
    VectorXd w_;
    std::vector<Index> original_rows_;
    double weight_sum_ = 0.0;
    double x_max_ = 1.0;
};

std::string level_tag(double level) {
    std::ostringstream os;
    os.precision(6);
    os << " (level " << level << ")";
    return os.str();
}

}  // namespace

void CheckLossProblem::validate() const {
    const Index n = design.rows();
    const Index k = design.cols();
    if (k < 1) throw InvalidInputError("check-loss problem needs at least one regressor");
    if (n < k) throw InvalidInputError("check-loss problem has fewer observations than regressors");
    if (responses.size() != n) throw InvalidInputError("responses and design row counts differ");
    if (!(level > 0.0 && level < 1.0)) throw InvalidInputError("quantile level must lie strictly inside (0,1)");
    if (!design.allFinite()) throw InvalidInputError("design contains non-finite entries");
    if (!responses.allFinite()) throw InvalidInputError("responses contain non-finite entries");
    if (weights.size() != 0) {
        if (weights.size() != n) throw InvalidInputError("weights length differs from observation count");
        if (!weights.allFinite() || (weights.array() < 0.0).any()) {
            throw InvalidInputError("weights must be finite and nonnegative");
        }
    }
    if (!column_names.empty() && static_cast<Index>(column_names.size()) != k) {
        throw InvalidInputError("column_names length differs from regressor count");
    }
}

void require_full_column_rank(const Eigen::MatrixXd& design, const Eigen::VectorXd& weights,
                              const std::vector<std::string>& column_names) {
    Index positive = 0;
    for (Index i = 0; i < design.rows(); ++i) positive += (weights.size() == 0 || weights(i) > 0.0) ? 1 : 0;
    MatrixXd active(positive, design.cols());
    for (Index i = 0, j = 0; i < design.rows(); ++i) {
        if (weights.size() == 0 || weights(i) > 0.0) active.row(j++) = design.row(i);
    }
    Eigen::ColPivHouseholderQR<MatrixXd> qr(active);
    qr.setThreshold(1e-10);
    const Index rank = qr.rank();
    if (rank == design.cols()) return;

    std::vector<int> columns;
    std::vector<std::string> names;
    const auto& perm = qr.colsPermutation().indices();
    for (Index j = rank; j < design.cols(); ++j) columns.push_back(perm(j));
    std::sort(columns.begin(), columns.end());
    std::ostringstream os;
    os << "design is rank deficient (rank " << rank << " of " << design.cols() << "); dependent columns:";
    for (int c : columns) {
        std::string name = c < static_cast<int>(column_names.size()) ? column_names[static_cast<size_t>(c)]
                                                                     : "#" + std::to_string(c);
        os << ' ' << name;
        names.push_back(std::move(name));
    }
    throw RankDeficiencyError(os.str(), std::move(columns), std::move(names));
}

QuantileFit fit(const CheckLossProblem& problem, const SolverOptions& options) {
    problem.validate();
    require_full_column_rank(problem.design, problem.weights, problem.column_names);
    const VertexSolver solver(problem.design, problem.responses, problem.weights);
    QuantileFit out = solver.descend(solver.cold_start(problem.level, options), problem.level, options);
    out.basis = solver.to_original(out.basis);
    return out;
}

QuantileProcess fit_process(const CheckLossProblem& problem_template, std::span<const double> grid,
                            const SolverOptions& options) {
    if (grid.empty()) throw InvalidInputError("quantile grid is empty");
    for (size_t t = 0; t < grid.size(); ++t) {
        if (!(grid[t] > 0.0 && grid[t] < 1.0)) throw InvalidInputError("quantile grid levels must lie in (0,1)");
        if (t > 0 && !(grid[t] > grid[t - 1])) throw InvalidInputError("quantile grid must be strictly increasing");
    }
    CheckLossProblem first = problem_template;
    first.level = grid.front();
    first.validate();
    require_full_column_rank(first.design, first.weights, first.column_names);

    const VertexSolver solver(first.design, first.responses, first.weights);
    QuantileProcess process;
    process.levels.assign(grid.begin(), grid.end());
    process.coefficients.resize(first.cols(), static_cast<Index>(grid.size()));
    process.objectives.reserve(grid.size());

    std::vector<Index> basis;
    for (size_t t = 0; t < grid.size(); ++t) {
        try {
            if (t == 0) basis = solver.cold_start(grid[t], options);
            QuantileFit level_fit = solver.descend(basis, grid[t], options);
            basis = level_fit.basis;
            process.coefficients.col(static_cast<Index>(t)) = level_fit.coefficients;
            process.objectives.push_back(level_fit.objective);
        } catch (const ConvergenceError& e) {
            throw ConvergenceError(e.what() + level_tag(grid[t]), e.best_iterate(), e.best_objective());
        } catch (const NumericError& e) {
            throw NumericError(e.what() + level_tag(grid[t]));
        }
    }
    return process;
}

std::vector<double> trimmed_grid(double epsilon, int count) {
    if (!(epsilon > 0.0 && epsilon < 0.5)) throw InvalidInputError("trimming epsilon must lie in (0, 0.5)");
    if (count < 2) throw InvalidInputError("trimmed grid needs at least two levels");
    std::vector<double> grid(static_cast<size_t>(count));
    const double width = (1.0 - 2.0 * epsilon) / static_cast<double>(count - 1);
    for (int t = 0; t < count; ++t) grid[static_cast<size_t>(t)] = epsilon + width * t;
    grid.back() = 1.0 - epsilon;
    return grid;
}

}  // namespace cvqr
