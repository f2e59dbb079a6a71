#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace anynet {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map "bad request" failures to one exit code and genuine bugs to another.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid architecture / shape / option combination.
class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

// API called in a way that is never valid (k out of range, backward on a
// non-scalar, training-mode batch norm on a single sample, ...).
class UsageError : public Error {
 public:
  explicit UsageError(const std::string& msg) : Error("usage error: " + msg) {}
};

// Bad dataset contents (label out of range, inconsistent hierarchy, ...).
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

// Malformed file (truncated record, bad magic, unparsable config, ...).
class FormatError : public Error {
 public:
  explicit FormatError(const std::string& msg) : Error("format error: " + msg) {}
};

// Budget below the cheapest restriction. Carries the minimum so callers can
// report what would have been feasible.
class BudgetError : public Error {
 public:
  BudgetError(const std::string& msg, std::uint64_t min_cost)
      : Error("budget error: " + msg), min_cost_(min_cost) {}
  std::uint64_t min_cost() const { return min_cost_; }

 private:
  std::uint64_t min_cost_;
};

// Non-finite values where finite ones are required (training divergence,
// debug-mode forward checks).
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg) : Error("numeric error: " + msg) {}
};

// Deterministic RNG used everywhere; seeded explicitly, never from the clock.
using Rng = std::mt19937_64;

// When enabled, every operator verifies its output is finite. Cheap relative
// to conv work; tests and the gradient checker switch it on.
void set_debug_checks(bool enabled);
bool debug_checks_enabled();

namespace detail {

template <typename... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

}  // namespace detail

}  // namespace anynet
