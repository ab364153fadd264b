#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace qmkl {

// Error categories. Each maps onto one CLI exit code (see tools/qmkl.cpp).

/// Invalid configuration values: qubit counts, dims, unknown enum names.
class configuration_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A function was called with arguments violating its preconditions.
class usage_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed feature-map text such as "Z-QQ".
class parse_error : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Inputs for which the requested quantity is undefined (zero-norm kernels,
/// constant regressors, all-nonpositive alignments).
class degenerate_input_error : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

/// An iterative solver hit its iteration cap. Carries the best iterate found.
class solver_error : public std::runtime_error {
public:
    solver_error(const std::string& what, std::vector<double> best_iterate)
        : std::runtime_error(what), best_(std::move(best_iterate)) {}

    const std::vector<double>& best_iterate() const noexcept { return best_; }

private:
    std::vector<double> best_;
};

/// Dataset ingestion failures; the message names the file and row.
class ingestion_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File-system level failures (missing files, unwritable outputs).
class io_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A cached artifact was produced from a different spec/split/mode.
class stale_artifact_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace qmkl
