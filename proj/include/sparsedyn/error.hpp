#pragma once

#include <stdexcept>
#include <string>

namespace sparsedyn {

// Shape or axis mismatch between operands.
class DimensionError : public std::runtime_error {
public:
    explicit DimensionError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad argument value (non-finite input, empty dataset, invalid config value).
class ArgumentError : public std::runtime_error {
public:
    explicit ArgumentError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failure inside a solver (singular Gram matrix, divergence).
class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed file contents or container corruption.
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

// Config file problems: unknown key, missing key, unparsable line.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Misuse of an API contract (non-scalar backward root, tape mixing).
class ContractViolation : public std::logic_error {
public:
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

} // namespace sparsedyn
