// Dimension prediction, Monte-Carlo measure, box counting, slope fits, and
// the mass-distribution bound checker, against closed-form oracles.
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "linforms/estimator.hpp"
#include "linforms/rng.hpp"

using namespace linforms;
using doctest::Approx;

namespace {

Vec vec1(double x) {
  Vec v(1);
  v << x;
  return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// predict_dimension
// ---------------------------------------------------------------------------

TEST_CASE("estimator: dimension formula reproduces pinned values") {
  CHECK(predict_dimension(2, 1, 3.0) == Approx(1.75).epsilon(1e-12));
  for (const double v : {1.5, 2.0, 3.0, 10.0}) {
    CHECK(predict_dimension(1, 1, v) == Approx(2.0 / (v + 1.0)).epsilon(1e-12));
  }
  // Saturation below the Lebesgue threshold tau <= n/m.
  CHECK(predict_dimension(2, 1, 1.5) == 2.0);
  CHECK(predict_dimension(2, 1, 2.0) == 2.0);
  CHECK(predict_dimension(3, 2, 1.0) == 6.0);
  CHECK(predict_dimension(1, 1, 0.3) == 1.0);
}

TEST_CASE("estimator: dimension formula is continuous at the threshold") {
  for (int n = 1; n <= 4; ++n) {
    for (int m = 1; m <= 4; ++m) {
      const double t = static_cast<double>(n) / m;
      // Algebraic identity m(n-1) + (m+n)/(n/m+1) = nm.
      const double supercritical = m * (n - 1) + (m + n) / (t + 1.0);
      CHECK(supercritical == Approx(static_cast<double>(n) * m).epsilon(1e-12));
      CHECK(predict_dimension(n, m, t) == Approx(static_cast<double>(n) * m).epsilon(1e-12));
      CHECK(predict_dimension(n, m, t + 1e-9) ==
            Approx(static_cast<double>(n) * m).epsilon(1e-7));
    }
  }
  CHECK_THROWS_AS(predict_dimension(0, 1, 2.0), config_error);
  CHECK_THROWS_AS(predict_dimension(1, 1, std::nan("")), config_error);
}

// ---------------------------------------------------------------------------
// mc_measure
// ---------------------------------------------------------------------------

TEST_CASE("estimator: mc_measure extremes are exact") {
  const SceneConfig zero = SceneConfig::make(2, 1, ApproxFunction::zero());
  const McResult rz = mc_measure(zero, 1, 10, 500, 42);
  CHECK(rz.hits == 0);
  CHECK(rz.fraction == 0.0);
  CHECK(rz.ci_half_width == 0.0);

  // psi(1) = 1 gives every point the q = (1,0) witness.
  const SceneConfig full = SceneConfig::make(2, 1, ApproxFunction::power_law(1.0, 1.0));
  const McResult rf = mc_measure(full, 1, 10, 500, 42);
  CHECK(rf.hits == 500);
  CHECK(rf.fraction == 1.0);
}

TEST_CASE("estimator: mc_measure recovers a known 1-d measure") {
  // n = m = 1, psi = 0.25 at q = 1 only: the hit set is [0,0.25] u [0.75,1],
  // measure 1/2.
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::table({{1.0, 0.25}}));
  const McResult r = mc_measure(scene, 1, 1, 20000, 7);
  CHECK(r.samples == 20000);
  CHECK(r.fraction == Approx(0.5).epsilon(0.04));  // ~5.7 sigma
  CHECK(r.ci_half_width ==
        Approx(1.96 * std::sqrt(r.fraction * (1.0 - r.fraction) / 20000)).epsilon(1e-12));
}

TEST_CASE("estimator: mc_measure is reproducible and thread-count independent") {
  const SceneConfig scene = SceneConfig::make(2, 1, ApproxFunction::power_law(0.3, 2.0));
  const McResult a = mc_measure(scene, 1, 30, 2000, 123, 1);
  const McResult b = mc_measure(scene, 1, 30, 2000, 123, 1);
  const McResult c = mc_measure(scene, 1, 30, 2000, 123, 4);
  CHECK(a.hits == b.hits);
  CHECK(a.hits == c.hits);
}

TEST_CASE("estimator: mc_measure fraction is monotone in Q") {
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::power_law(0.9, 1.5));
  double last = 0.0;
  for (const int Q : {1, 2, 5, 20, 60}) {
    const double f = mc_measure(scene, 1, Q, 4000, 11).fraction;
    CHECK(f >= last);
    last = f;
  }
  CHECK_THROWS_AS(mc_measure(scene, 5, 4, 100, 1), config_error);
  CHECK_THROWS_AS(mc_measure(scene, 1, 4, 0, 1), config_error);
}

TEST_CASE("estimator: tail bound equals the analytic shell sum") {
  // n = 2, m = 1, psi = q^{-3}: sum over shells of 8 s * 2 psi(s).
  const SceneConfig scene = SceneConfig::make(2, 1, ApproxFunction::power_law(1.0, 3.0));
  double expect = 0.0;
  for (int s = 50; s <= 500; ++s) expect += 8.0 * s * 2.0 * std::pow(s, -3.0);
  CHECK(mc_tail_bound(scene, 50, 500) == Approx(expect).epsilon(1e-12));

  // n = 1: two q per shell; per-plane measure saturates at 1 when psi >= 1/2.
  const SceneConfig wide = SceneConfig::make(1, 1, ApproxFunction::power_law(10.0, 1.0));
  CHECK(mc_tail_bound(wide, 1, 3) == Approx(2.0 + 2.0 + 2.0).epsilon(1e-12));
}

// ---------------------------------------------------------------------------
// box_count
// ---------------------------------------------------------------------------

TEST_CASE("estimator: box count saturates on the full cube") {
  // psi = 2 everywhere: every cell is hit, N = delta^{-nm} exactly.
  const SceneConfig s1 = SceneConfig::make(1, 1, ApproxFunction::power_law(2.0, 0.0));
  CHECK(box_count(s1, 1, 1.0 / 16, BoxWidthMode::TruncationWidth).boxes == 16);
  const SceneConfig s2 = SceneConfig::make(2, 1, ApproxFunction::power_law(2.0, 0.0));
  CHECK(box_count(s2, 1, 1.0 / 8, BoxWidthMode::PerDenominatorWidth).boxes == 64);
}

TEST_CASE("estimator: box count matches hand intervals in one dimension") {
  // psi(1) = 0.1, Q = 1: hit set [0, 0.1) u (0.9, 1]; delta = 1/3 marks the
  // two outer cells only.
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::table({{1.0, 0.1}}));
  CHECK(box_count(scene, 1, 1.0 / 3, BoxWidthMode::PerDenominatorWidth).boxes == 2);
  // delta = 1/5: cells [0,0.2) and (0.8,1] again.
  CHECK(box_count(scene, 1, 0.2, BoxWidthMode::PerDenominatorWidth).boxes == 2);
  // delta = 0.04: [0,0.1) covers cells 0,1,2 and (0.9,1] covers 22,23,24.
  CHECK(box_count(scene, 1, 0.04, BoxWidthMode::PerDenominatorWidth).boxes == 6);
}

TEST_CASE("estimator: box count grows as delta shrinks and with wider widths") {
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::power_law(1.0, 3.0));
  std::int64_t last = 0;
  for (const double delta : {1.0 / 64, 1.0 / 256, 1.0 / 1024}) {
    const std::int64_t n = box_count(scene, 8, delta, BoxWidthMode::TruncationWidth).boxes;
    CHECK(n >= last);
    last = n;
  }
  // Per-denominator widths dominate the truncation width at the same Q.
  const std::int64_t trunc =
      box_count(scene, 8, 1.0 / 512, BoxWidthMode::TruncationWidth).boxes;
  const std::int64_t per =
      box_count(scene, 8, 1.0 / 512, BoxWidthMode::PerDenominatorWidth).boxes;
  CHECK(per >= trunc);
}

TEST_CASE("estimator: box count rejects unsupported configurations") {
  const SceneConfig scene = SceneConfig::make(2, 2, ApproxFunction::power_law(1.0, 3.0));
  CHECK_THROWS_AS(box_count(scene, 4, 0.125, BoxWidthMode::TruncationWidth), config_error);
  const SceneConfig s2 = SceneConfig::make(2, 1, ApproxFunction::power_law(1.0, 3.0));
  CHECK_THROWS_AS(box_count(s2, 4, 1e-6, BoxWidthMode::TruncationWidth), config_error);
  CHECK_THROWS_AS(box_count(s2, 0, 0.125, BoxWidthMode::TruncationWidth), config_error);
}

TEST_CASE("estimator: slope fits are exact on synthetic data") {
  std::vector<std::pair<double, double>> xy;
  for (const double x : {0.0, 1.0, 2.0, 5.0}) xy.push_back({x, 2.0 * x + 3.0});
  CHECK(fit_slope(xy) == Approx(2.0).epsilon(1e-12));

  // N = delta^{-1} exactly: slope 1.
  const SceneConfig full = SceneConfig::make(1, 1, ApproxFunction::power_law(2.0, 0.0));
  const std::vector<BoxCountRow> rows = box_count_schedule(
      full, {{1, 1.0 / 8}, {1, 1.0 / 16}, {1, 1.0 / 32}}, BoxWidthMode::TruncationWidth);
  CHECK(fit_loglog_slope(rows) == Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(fit_loglog_slope({rows[0], rows[1]}), config_error);
}

TEST_CASE("estimator: resolution-matched schedule recovers the 1-d limsup dimension") {
  // tau = 3 at delta = Q^{-4}: the count tracks the Farey pair count Q^2,
  // so the fitted slope approaches 2/(tau+1) = 1/2.
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::power_law(1.0, 3.0));
  std::vector<ScheduleEntry> schedule;
  for (int t = 4; t <= 8; ++t) {
    const double q = std::pow(2.0, t);
    schedule.push_back({static_cast<int>(q), std::pow(q, -4.0)});
  }
  const double slope =
      fit_loglog_slope(box_count_schedule(scene, schedule, BoxWidthMode::TruncationWidth));
  CHECK(slope == Approx(0.5).epsilon(0.2));
}

// ---------------------------------------------------------------------------
// verify_mdp_bound
// ---------------------------------------------------------------------------

TEST_CASE("estimator: uniform measure satisfies the linear mass bound with ratio <= 2") {
  // mu = Lebesgue on [0,1], f = r: mu(B(c, r)) <= 2r, with equality for balls
  // inside the unit interval, so the sampled max ratio sits at 2.
  const auto mu = [](const Ball& d) {
    const double lo = std::max(0.0, d.center(0) - d.radius);
    const double hi = std::min(1.0, d.center(0) + d.radius);
    return std::max(0.0, hi - lo);
  };
  const DimensionFunction f = DimensionFunction::power_law(1.0, 1.0);
  const MdpReport rep = verify_mdp_bound(mu, Ball(vec1(0.5), 0.5), f, 4000, 2024,
                                         NormSpec::euclidean());
  CHECK(rep.samples == 4000);
  CHECK(rep.mass == Approx(1.0).epsilon(1e-12));
  CHECK(rep.max_ratio <= 2.0 + 1e-9);
  CHECK(rep.max_ratio > 1.9);
  CHECK(rep.exponent == Approx(1.0).epsilon(0.2));
}

TEST_CASE("estimator: point mass away from the domain keeps all ratios at zero") {
  const auto mu = [](const Ball& d) {
    Vec p(1);
    p << 50.0;
    return (std::fabs(d.center(0) - p(0)) <= d.radius) ? 1.0 : 0.0;
  };
  const DimensionFunction f = DimensionFunction::power_law(1.0, 0.5);
  const MdpReport rep =
      verify_mdp_bound(mu, Ball(vec1(0.5), 0.5), f, 500, 3, NormSpec::euclidean());
  CHECK(rep.max_ratio == 0.0);
}

TEST_CASE("estimator: mdp sampling is reproducible per seed") {
  const auto mu = [](const Ball& d) { return d.radius; };
  const DimensionFunction f = DimensionFunction::power_law(1.0, 1.0);
  const MdpReport a = verify_mdp_bound(mu, Ball(vec1(0.0), 1.0), f, 200, 9, NormSpec::euclidean());
  const MdpReport b = verify_mdp_bound(mu, Ball(vec1(0.0), 1.0), f, 200, 9, NormSpec::euclidean());
  CHECK(a.max_ratio == b.max_ratio);
  CHECK(a.exponent == b.exponent);
}
