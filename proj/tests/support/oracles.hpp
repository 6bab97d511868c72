#pragma once

// Independent reference computations used only by tests.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace cvqr::testing {

inline double plain_check_loss(double level, double r) { return r < 0.0 ? (level - 1.0) * r : level * r; }

inline double objective_at(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, const Eigen::VectorXd& b, double level,
                           const Eigen::VectorXd& w = {}) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double r = y(i) - X.row(i).dot(b);
        total += (w.size() ? w(i) : 1.0) * plain_check_loss(level, r);
    }
    return total;
}

/// Minimum check loss over every basic solution (every nonsingular k-subset of
/// rows interpolated exactly). An optimal basic solution always exists for a
/// full-rank design, so this is the LP optimum.
inline double vertex_enumeration_optimum(const Eigen::VectorXd& y, const Eigen::MatrixXd& X, double level,
                                         const Eigen::VectorXd& w = {}) {
    const int n = static_cast<int>(X.rows());
    const int k = static_cast<int>(X.cols());
    std::vector<int> idx(static_cast<size_t>(k));
    for (int j = 0; j < k; ++j) idx[static_cast<size_t>(j)] = j;
    double best = std::numeric_limits<double>::infinity();
    while (true) {
        Eigen::MatrixXd B(k, k);
        Eigen::VectorXd yb(k);
        for (int j = 0; j < k; ++j) {
            B.row(j) = X.row(idx[static_cast<size_t>(j)]);
            yb(j) = y(idx[static_cast<size_t>(j)]);
        }
        Eigen::FullPivLU<Eigen::MatrixXd> lu(B);
        if (lu.isInvertible()) best = std::min(best, objective_at(y, X, lu.solve(yb), level, w));
        int j = k - 1;
        while (j >= 0 && idx[static_cast<size_t>(j)] == n - k + j) --j;
        if (j < 0) break;
        ++idx[static_cast<size_t>(j)];
        for (int m = j + 1; m < k; ++m) idx[static_cast<size_t>(m)] = idx[static_cast<size_t>(m - 1)] + 1;
    }
    return best;
}

/// Type-1 (inverse empirical CDF) sample quantile.
inline double order_statistic_quantile(std::vector<double> v, double p) {
    std::sort(v.begin(), v.end());
    const auto n = static_cast<double>(v.size());
    auto j = static_cast<long>(std::ceil(n * p - 1e-12));
    j = std::clamp<long>(j, 1, static_cast<long>(v.size()));
    return v[static_cast<size_t>(j - 1)];
}

}  // namespace cvqr::testing
