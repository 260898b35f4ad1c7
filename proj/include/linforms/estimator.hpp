// linforms — empirical estimators: the closed-form dimension prediction for
// power-law scenes, Monte-Carlo measure of truncated approximation sets,
// box-counting at schedule-driven scales, and log-log slope fitting.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "linforms/diophantine.hpp"

namespace linforms {

// ---------------------------------------------------------------------------
// Dimension prediction
// ---------------------------------------------------------------------------

/// Hausdorff dimension of the ψ(q) = q^{-tau} approximation set for an
/// n x m scene: m(n-1) + (m+n)/(tau+1) once tau exceeds the Lebesgue
/// divergence threshold n/m, and the full nm below it (saturation).
double predict_dimension(int n, int m, double tau);

// ---------------------------------------------------------------------------
// Monte-Carlo measure
// ---------------------------------------------------------------------------

struct McResult {
  std::int64_t samples = 0;
  std::int64_t hits = 0;
  double fraction = 0.0;
  double ci_half_width = 0.0;  // 1.96 · sqrt(fraction(1-fraction)/samples)
};

/// Fraction of uniform sample points in [0,1]^{nm} having a witness q with
/// G <= |q|_sup <= Q (some integer p puts |q·X + p·Phi - y|_sup below
/// psi(|q|_sup)).  Deterministic in (seed, samples): the verdict of sample i
/// never depends on thread count.
McResult mc_measure(const SceneConfig& scene, int G, int Q, std::int64_t samples,
                    std::uint64_t seed, int threads = 1);

/// Union bound on the Lebesgue measure of the shell-G..Q truncation:
/// Σ_s shell_count(s) · (2ψ̂(s))^m, exact per-plane measure for ψ̂(s) < 1/2.
double mc_tail_bound(const SceneConfig& scene, int G, int Q);

// ---------------------------------------------------------------------------
// Box counting
// ---------------------------------------------------------------------------

enum class BoxWidthMode {
  TruncationWidth,     // every denominator uses width psi(Q) — resolution-matched
  PerDenominatorWidth  // denominator q uses width psi(|q|_sup)
};

struct BoxCountRow {
  int Q = 0;
  double delta = 0.0;
  std::int64_t boxes = 0;  // number of delta-cells of [0,1]^{nm} meeting the union
};

/// Counts delta-cells meeting U = ∪_{1<=|q|_sup<=Q} {x : |q·X + p·Phi - y|_sup < w}
/// over all integer p, with w chosen by the width mode.  Exact interval
/// arithmetic for nm = 1; conservative cell-overlap rasterization on a
/// bitmap for nm = 2.  Scenes with nm > 2 are not supported by this
/// estimator (the bitmap would not fit the pinned schedules).
BoxCountRow box_count(const SceneConfig& scene, int Q, double delta, BoxWidthMode mode);

struct ScheduleEntry {
  int Q;
  double delta;
};

/// Runs box_count over a schedule and returns the rows in order.
std::vector<BoxCountRow> box_count_schedule(const SceneConfig& scene,
                                            const std::vector<ScheduleEntry>& schedule,
                                            BoxWidthMode mode);

/// Least-squares slope of log(boxes) against log(1/delta); this is the
/// box-dimension estimate for the schedule.
double fit_loglog_slope(const std::vector<BoxCountRow>& rows);

/// Generic least-squares slope of y against x.
double fit_slope(const std::vector<std::pair<double, double>>& xy);

// ---------------------------------------------------------------------------
// Greedy Hausdorff premeasure bounds
// ---------------------------------------------------------------------------

/// A finite union of balls and clipped plane neighborhoods to be covered.
struct CoverTarget {
  struct Slab {
    AffinePlane plane;
    double width = 0.0;  // the neighborhood half-width around the plane
    Ball clip;           // only the part of the slab inside this ball counts
  };
  std::vector<Ball> balls;
  std::vector<Slab> slabs;
};

/// Greedy rho-cover premeasure bound: covers each ball by a lattice of
/// radius-rho balls (or by itself when it already fits) and each slab by a
/// lattice of radius-rho balls along its plane, then returns Σ f(r_i).
/// Always an upper bound for the rho-premeasure of the target.
double hausdorff_f_upper(const CoverTarget& target, const DimensionFunction& f, double rho);

// ---------------------------------------------------------------------------
// Mass-distribution bound check
// ---------------------------------------------------------------------------

struct MdpReport {
  double max_ratio = 0.0;  // max mu(D) / f(r(D)) over the sampled balls
  double mass = 0.0;       // mu of the whole domain
  std::size_t samples = 0;
  double exponent = 0.0;   // fitted growth of mu(D) in log r (diagnostic)
};

/// Samples balls D inside `domain` (centres uniform, radii log-uniform over
/// [r(domain)/10^4, r(domain)]) and reports the largest mu(D) / f(r(D)).
/// A measure obeying the mass-distribution hypothesis keeps this bounded;
/// the bound then transfers to a lower bound on H^f of the support.
MdpReport verify_mdp_bound(const std::function<double(const Ball&)>& mu, const Ball& domain,
                           const DimensionFunction& f, std::size_t samples, std::uint64_t seed,
                           const NormSpec& norm);

}  // namespace linforms
