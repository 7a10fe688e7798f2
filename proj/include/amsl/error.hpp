#pragma once

#include <stdexcept>
#include <string>

namespace amsl {

/// Broad failure class. The CLI maps these onto process exit codes.
enum class ErrorKind {
  config,    ///< invalid configuration or shape composition
  data,      ///< malformed input files or unattainable data requests
  numeric,   ///< non-finite values, degenerate queries
  contract,  ///< API misuse (stale cache, bad precondition)
};

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

/// Tensor or matrix extents do not match what an operation expects.
struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct ContractError : Error {
  explicit ContractError(const std::string& what) : Error(ErrorKind::contract, what) {}
};

inline int exit_code_for(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::config: return 2;
    case ErrorKind::data: return 3;
    case ErrorKind::numeric: return 4;
    case ErrorKind::contract: return 1;
  }
  return 1;
}

}  // namespace amsl
