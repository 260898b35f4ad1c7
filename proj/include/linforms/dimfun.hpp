// linforms — dimension functions f(r) = c·r^s·(log 1/r)^a, the derived
// auxiliary function g(r) = r^{-l} f(r), approximating functions ψ, the
// ψ → θ transference transform, and convergence classification of the
// volume sums that drive zero–full measure laws.
// SPDX-License-Identifier: MIT
#pragma once

#include <memory>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "linforms/common.hpp"

namespace linforms {

// ---------------------------------------------------------------------------
// Exponent arithmetic for h(r) = C · r^t · (log 1/r)^a near 0.
// ---------------------------------------------------------------------------

enum class Monotonicity { NonDecreasing, NonIncreasing, Constant, Mixed };
enum class LimitAtZero { Zero, Positive, Infinite };

/// Monotonicity of r^t (log 1/r)^a on (0, r_hi], 0 < r_hi < 1 (or <= 1 when
/// a == 0).  Derivative sign is the sign of t·log(1/r) − a, so the behaviour
/// on the whole interval is decided by the value at r_hi.
Monotonicity power_log_monotonicity(double t, double a, double r_hi);

/// Limit of r^t (log 1/r)^a as r → 0+.
LimitAtZero power_log_limit_at_zero(double t, double a);

// ---------------------------------------------------------------------------
// Dimension functions
// ---------------------------------------------------------------------------

/// A dimension function from the closed family f(r) = coeff·r^power·(log 1/r)^log_power,
/// valid on (0, r_cap] with f(0) := 0.  Construction enforces the axioms:
/// positive, non-decreasing on (0, r_cap], and f(r) → 0 as r → 0+.
struct DimensionFunction {
  double coeff = 1.0;
  double power = 1.0;
  double log_power = 0.0;
  double r_cap = 1.0;

  /// Largest default domain on which the family member is a dimension
  /// function: 1 for pure power laws, min(e^-2, e^{-a/s}) when a > 0 (the
  /// monotonicity boundary), e^-2 when a < 0 (keeps log 1/r bounded away
  /// from 0).
  static double default_r_cap(double power, double log_power);

  /// Validated constructor with the default cap.
  static DimensionFunction power_law(double coeff, double power, double log_power = 0.0);

  /// Validated constructor with an explicit cap in (0, 1].
  static DimensionFunction with_cap(double coeff, double power, double log_power, double r_cap);

  /// Checked evaluation: f(0) = 0, throws config_error for r < 0 or r > r_cap.
  double operator()(double r) const;

  /// Closed-form evaluation without the cap check, for r in (0, 1)
  /// (or (0, 1] when log_power == 0).  Used by transforms and constants that
  /// must look at the formula outside the validated domain.
  double eval_extended(double r) const;

  /// Inverse of the pure-power member: r with f(r) = v (log_power must be 0).
  double invert(double v) const;

  std::string describe() const;
};

/// The pair (f, g) with g(r) = r^{-l} f(r), k = m + l, used by the
/// transference machinery.  `derive` validates that g is itself a dimension
/// function (requires l < power(f)) and that power(f) <= k, and records the
/// behaviour of the comparison ratio r^{-k} f(r).
struct TransferPair {
  DimensionFunction f;
  DimensionFunction g;
  int m = 1;
  int l = 0;
  int k = 1;
  Monotonicity ratio_monotonicity = Monotonicity::Constant;  // of r^{-k} f(r)
  LimitAtZero ratio_limit = LimitAtZero::Positive;           // of r^{-k} f(r) as r -> 0+

  static TransferPair derive(const DimensionFunction& f, int m, int l);
};

/// Verdict for lim_{r->0} f(r)/h(r) within the closed family; a Zero verdict
/// is the hypothesis under which an h-null set is automatically f-null.
LimitAtZero compare_dimension_functions(const DimensionFunction& f, const DimensionFunction& h);

// ---------------------------------------------------------------------------
// Approximating functions ψ
// ---------------------------------------------------------------------------

struct PowerLawPsi {
  double coeff = 1.0;
  double tau = 1.0;  // ψ(q) = coeff · q^{-tau}
};

/// Finite table of (q, ψ(q)) rows, sorted by q strictly increasing; ψ is 0
/// beyond the last row and evaluates by exact match or step interpolation
/// (value of the nearest row at or below q).
struct TablePsi {
  std::vector<std::pair<double, double>> rows;
};

struct ZeroPsi {};

class ApproxFunction;

/// min(inner ψ, cap) — used for the ψ ≤ 1 normalization before transfer.
struct ClampedPsi {
  std::shared_ptr<const ApproxFunction> inner;
  double cap = 1.0;
};

/// Pointwise transform θ(r) = r · g(ψ(r)/r)^{1/m} kept as an evaluable
/// function when no closed form exists (log-corrected g, clamped ψ).
struct TransformedPsi {
  std::shared_ptr<const ApproxFunction> inner;
  DimensionFunction g;
  int m = 1;
};

/// A non-negative approximating function of the denominator size q >= 1.
class ApproxFunction {
 public:
  using Variant = std::variant<PowerLawPsi, TablePsi, ZeroPsi, ClampedPsi, TransformedPsi>;

  static ApproxFunction power_law(double coeff, double tau);
  static ApproxFunction table(std::vector<std::pair<double, double>> rows);
  static ApproxFunction zero();
  static ApproxFunction clamped(ApproxFunction inner, double cap);
  static ApproxFunction transformed(ApproxFunction inner, DimensionFunction g, int m);

  double operator()(double q) const;

  const PowerLawPsi* as_power_law() const { return std::get_if<PowerLawPsi>(&v_); }
  const TablePsi* as_table() const { return std::get_if<TablePsi>(&v_); }
  bool is_zero() const { return std::holds_alternative<ZeroPsi>(v_); }
  const Variant& raw() const { return v_; }

  std::string describe() const;

 private:
  explicit ApproxFunction(Variant v) : v_(std::move(v)) {}
  Variant v_;
};

/// θ(r) = r · g(ψ(r)/r)^{1/m}.  PowerLaw ψ with pure-power g composes in
/// closed form (exact parameter arithmetic); Table ψ transforms row-wise;
/// anything else returns a TransformedPsi wrapper.  Requires ψ(r)/r → 0
/// (PowerLaw: tau > -1).
ApproxFunction theta_transform(const TransferPair& pair, const ApproxFunction& psi);

/// Scalar form of the matrix transform: Θ = |q| · g(Ψ/|q|)^{1/m} for one
/// pair value Ψ = Ψ(p, q) and denominator norm |q|.  Validation of the
/// decay hypothesis sup_p Ψ(p,q)/|q| → 0 is the caller's job for general Ψ;
/// power-law Ψ is rejected here when tau <= -1.
double big_theta_transform(const TransferPair& pair, double psi_value, double q_norm);

// ---------------------------------------------------------------------------
// Series classification
// ---------------------------------------------------------------------------

enum class SeriesVerdict { Convergent, Divergent };

struct SeriesAnalysis {
  SeriesVerdict verdict = SeriesVerdict::Convergent;
  double term_exponent = 0.0;      // e with term ~ C · q^e (log q)^a
  double term_log_exponent = 0.0;  // a
  bool boundary = false;           // e == -1 within 1e-12 (log exponent decides)
  std::string method;              // "exponent" or "table-tail-fit"
};

/// Σ_{q≥1} q^{n-1} ψ(q)^m with ψ clamped at 1 — the volume sum whose
/// convergence/divergence separates null from full Lebesgue measure.
SeriesAnalysis classify_lebesgue_series(const ApproxFunction& psi, int n, int m);

/// Σ_{q≥1} q^{n+m-1} g(ψ(q)/q) with ψ clamped at 1 — the volume sum for the
/// Hausdorff-measure zero–full law attached to the pair (f, g).
SeriesAnalysis classify_hausdorff_series(const TransferPair& pair, const ApproxFunction& psi,
                                         int n, int m);

}  // namespace linforms
