#pragma once

#include <stdexcept>
#include <string>

namespace adopt {

/// Base class for all errors raised by the library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration: bad config files, unknown ids, infeasible budgets.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what) {}
};

/// A caller violated a documented precondition or invariant.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

/// A model backend failed (network error, exhausted retries, bad payload).
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what) : Error(what) {}
};

/// The scripted backend received a request it has no entry or rule for.
class UnscriptedRequestError : public BackendError {
 public:
  UnscriptedRequestError(const std::string& what, std::string digest)
      : BackendError(what), digest_(std::move(digest)) {}

  const std::string& digest() const { return digest_; }

 private:
  std::string digest_;
};

}  // namespace adopt
