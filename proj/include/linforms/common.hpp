// linforms — shared error types and numeric helpers.
// SPDX-License-Identifier: MIT
#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace linforms {

/// Raised when a configuration value is outside the supported domain
/// (bad parameters, unsupported combinations, malformed config text).
class config_error : public std::invalid_argument {
 public:
  explicit config_error(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when a named structural property fails at runtime (a constructed
/// object violates an invariant it is required to satisfy).  The property
/// name is embedded at the start of the message as "property-name: detail".
class property_error : public std::runtime_error {
 public:
  property_error(const std::string& property, const std::string& detail)
      : std::runtime_error(property + ": " + detail), property_(property) {}
  const std::string& property() const { return property_; }

 private:
  std::string property_;
};

/// Default relative tolerance for geometric comparisons (containment,
/// disjointness).  Chosen far below every asserted margin in the builders.
inline constexpr double kGeomTol = 1e-12;

/// True when |a - b| <= tol * max(1, |a|, |b|).
inline bool almost_equal(double a, double b, double tol = 1e-12) {
  return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace linforms
