#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace cvqr {

/// Base of all library errors. The category maps one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
public:
    enum class Category { Usage = 1, Data = 2, Identification = 3, Numeric = 4 };

    Error(Category category, const std::string& what)
        : std::runtime_error(what), category_(category) {}

    Category category() const noexcept { return category_; }
    int exit_code() const noexcept { return static_cast<int>(category_); }

private:
    Category category_;
};

class InvalidInputError : public Error {
public:
    explicit InvalidInputError(const std::string& what) : Error(Category::Data, what) {}
};

class DomainError : public Error {
public:
    explicit DomainError(const std::string& what) : Error(Category::Data, what) {}
};

class ConfigError : public Error {
public:
    explicit ConfigError(const std::string& what) : Error(Category::Usage, what) {}
};

// Exact rank deficiency of a regression design.
class RankDeficiencyError : public Error {
public:
    RankDeficiencyError(const std::string& what, std::vector<int> columns, std::vector<std::string> names)
        : Error(Category::Identification, what), columns_(std::move(columns)), names_(std::move(names)) {}

    const std::vector<int>& columns() const noexcept { return columns_; }
    const std::vector<std::string>& column_names() const noexcept { return names_; }

private:
    std::vector<int> columns_;
    std::vector<std::string> names_;
};

class IdentificationError : public Error {
public:
    explicit IdentificationError(const std::string& what) : Error(Category::Identification, what) {}
};

// Solver gave up; carries the best iterate seen.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, Eigen::VectorXd best, double objective)
        : Error(Category::Numeric, what), best_(std::move(best)), objective_(objective) {}

    const Eigen::VectorXd& best_iterate() const noexcept { return best_; }
    double best_objective() const noexcept { return objective_; }

private:
    Eigen::VectorXd best_;
    double objective_;
};

class NumericError : public Error {
public:
    explicit NumericError(const std::string& what) : Error(Category::Numeric, what) {}
};

}  // namespace cvqr
