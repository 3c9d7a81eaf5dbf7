#pragma once

#include <stdexcept>
#include <string>

namespace lrnet {

/// Violated precondition or shape contract on a public operation.
class ContractError : public std::runtime_error {
public:
  explicit ContractError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed input file (bad magic, truncation, dangling ids, ...).
class FormatError : public std::runtime_error {
public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid experiment or estimator configuration.
class ConfigError : public std::runtime_error {
public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// Request exceeds a declared capability bound (e.g. Sobol dimension).
class CapabilityError : public std::runtime_error {
public:
  explicit CapabilityError(const std::string& what) : std::runtime_error(what) {}
};

/// Training run aborted (non-finite loss).
class TrainingDiverged : public std::runtime_error {
public:
  explicit TrainingDiverged(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace lrnet
