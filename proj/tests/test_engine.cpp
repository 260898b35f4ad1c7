// Construction engine: plane sources, comparison constants, the packing
// window regeneration, kept collections, plane packings, the Cantor tree on
// two frozen scenes, the measure checks, and every rejection path.
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "doctest.h"
#include "linforms/engine.hpp"
#include "linforms/rng.hpp"

using namespace linforms;
using doctest::Approx;

namespace {

Vec vec1(double x) {
  Vec v(1);
  v << x;
  return v;
}

Vec vec2(double x, double y) {
  Vec v(2);
  v << x, y;
  return v;
}

AffinePlane point_plane(double x) {
  Eigen::MatrixXd rows(1, 1);
  rows << 1.0;
  return AffinePlane::from_equations(rows, vec1(x));
}

AffinePlane vertical_line(double x1, const Vec& base) {
  Eigen::MatrixXd rows(1, 2);
  rows << 1.0, 0.0;
  AffinePlane p = AffinePlane::from_equations(rows, vec1(x1));
  p.base = base;
  return p;
}

std::vector<AffinePlane> point_row(double lo, double hi, double step) {
  std::vector<AffinePlane> out;
  for (double x = lo; x <= hi + step / 2.0; x += step) out.push_back(point_plane(x));
  return out;
}

/// Points i * 2^(e-t) on the dyadic line, envelope 4^(e-t), f = sqrt(r):
/// kept balls at shell t have radius exactly the grid spacing.
MtpScene dyadic_line_scene() {
  auto src = std::make_shared<DyadicSource>(1, 8);
  const TransferPair pair = TransferPair::derive(DimensionFunction::power_law(1.0, 0.5), 1, 0);
  return MtpScene::make(src, pair, NormSpec::euclidean(), Ball(vec1(128.0), 150.0));
}

/// Vertical lines x1 = i * 2^(e-t) in the plane, f = r^(3/2) (so g = sqrt(r)).
MtpScene vertical_lines_scene() {
  auto src = std::make_shared<DyadicSource>(2, 6);
  const TransferPair pair = TransferPair::derive(DimensionFunction::power_law(1.0, 1.5), 1, 1);
  return MtpScene::make(src, pair, NormSpec::euclidean(), Ball(vec2(32.0, 32.0), 30.0));
}

MtpScene explicit_point_scene(std::vector<double> upsilon,
                              std::vector<std::vector<AffinePlane>> shells, Ball omega) {
  auto src = std::make_shared<ExplicitSource>(1, 0, std::move(upsilon), std::move(shells));
  const TransferPair pair = TransferPair::derive(DimensionFunction::power_law(1.0, 0.5), 1, 0);
  return MtpScene::make(src, pair, NormSpec::euclidean(), std::move(omega));
}

double max_tree_node_ratio(const CantorTree& tree) {
  const double eta = tree.options.eta;
  const DimensionFunction& f = tree.scene.pair.f;
  double best = 0.0;
  std::function<void(const CantorNode&)> walk = [&](const CantorNode& n) {
    if (n.level >= 2) best = std::max(best, n.mu * eta / f(n.ball.radius));
    if (n.local && n.children.empty()) {
      for (const KgbEntry& e : n.local->entries) {
        if (e.pack.run.empty || e.pack.run.count < 1) continue;
        best = std::max(best, e.pack.run.mu_each * eta / f(e.pack.run.radius));
      }
    }
    for (const CantorNode& c : n.children) walk(c);
  };
  walk(tree.root);
  return best;
}

}  // namespace

// ---------------------------------------------------------------------------
// Plane sources
// ---------------------------------------------------------------------------

TEST_CASE("engine: dyadic source produces exact envelopes, spacing, and planes") {
  const DyadicSource line(1, 8);
  CHECK(line.ambient_dim() == 1);
  CHECK(line.plane_dim() == 0);
  CHECK(line.max_shell() == 48);
  CHECK(DyadicSource::kMaxShell == 48);
  CHECK(line.upsilon(8) == 1.0);
  CHECK(line.upsilon(11) == std::ldexp(1.0, -6));
  CHECK(line.upsilon(48) == std::ldexp(1.0, -80));
  CHECK(line.spacing(8) == 1.0);
  CHECK(line.spacing(11) == 0.125);

  const Ball dense = line.dense_region();
  CHECK(dense.center.size() == 1);
  CHECK(dense.center(0) == 128.0);
  CHECK(dense.radius == 128.0);

  // Shell 11 points near 128 have spacing 1/8: every lattice point meeting
  // the region must be listed, with at most a few near misses extra.
  const std::vector<AffinePlane> pts = line.planes_near(11, Ball(vec1(128.0), 0.5));
  CHECK(pts.size() >= 9);
  CHECK(pts.size() <= 13);
  for (const AffinePlane& p : pts) {
    CHECK(p.l == 0);
    CHECK(std::abs(p.base(0) - 128.0) <= 0.5 + 0.25 + 1e-12);
    CHECK(p.base(0) == std::round(p.base(0) * 8.0) / 8.0);  // exact lattice point
  }
  for (int i = 1020; i <= 1028; ++i) {
    const double want = static_cast<double>(i) * 0.125;
    const bool found = std::any_of(pts.begin(), pts.end(),
                                   [&](const AffinePlane& p) { return p.base(0) == want; });
    CHECK(found);
  }

  const DyadicSource lines(2, 6);
  CHECK(lines.ambient_dim() == 2);
  CHECK(lines.plane_dim() == 1);
  CHECK(lines.upsilon(9) == std::ldexp(1.0, -6));
  CHECK(lines.spacing(9) == std::ldexp(1.0, -3));
  const Ball dense2 = lines.dense_region();
  CHECK(dense2.center(0) == 32.0);
  CHECK(dense2.center(1) == 32.0);
  CHECK(dense2.radius == 32.0);

  const Vec probe = vec2(32.0, 32.0);
  const std::vector<AffinePlane> vls = lines.planes_near(9, Ball(probe, 0.3));
  CHECK(vls.size() >= 5);
  CHECK(vls.size() <= 9);
  const NormSpec norm = NormSpec::euclidean();
  for (const AffinePlane& p : vls) {
    CHECK(p.l == 1);
    CHECK(std::abs(p.tangent(0, 0)) == 0.0);  // vertical line: tangent is the x2 axis
    CHECK(std::abs(p.tangent(1, 0)) == 1.0);
    CHECK(p.base(0) == std::round(p.base(0) * 8.0) / 8.0);
    CHECK(norm(probe - p.project(probe)) == std::abs(probe(0) - p.base(0)));
  }
  for (int i = 254; i <= 258; ++i) {
    const double want = static_cast<double>(i) * 0.125;
    const bool found = std::any_of(vls.begin(), vls.end(),
                                   [&](const AffinePlane& p) { return p.base(0) == want; });
    CHECK(found);
  }
}

TEST_CASE("engine: resonant-plane source matches the pair enumeration") {
  const SceneConfig scene = SceneConfig::make(1, 1, ApproxFunction::power_law(1.0, 2.0));
  const DiophantineSource src(scene, 8, 3.0);
  CHECK(src.ambient_dim() == 1);
  CHECK(src.plane_dim() == 0);
  CHECK(src.max_shell() == 8);
  for (const int j : {1, 2, 5, 8}) {
    CHECK(src.upsilon(j) ==
          Approx(std::pow(static_cast<double>(j), -3.0)).epsilon(1e-12));  // psi(j)/j
  }
  const Ball dense = src.dense_region();
  CHECK(dense.center.size() == 1);
  CHECK(dense.center(0) == 0.5);
  CHECK(dense.radius == 0.5);

  // Every resonant point of shell 2 meeting [0, 1] must be listed.
  const Ball region(vec1(0.5), 0.5);
  const std::vector<AffinePlane> got = src.planes_near(2, region);
  CHECK(!got.empty());
  for (const AffinePlane& p : got) {
    CHECK(p.l == 0);
    // shell-2 resonant points are half-integers
    CHECK(std::abs(p.base(0) * 2.0 - std::round(p.base(0) * 2.0)) < 1e-9);
  }
  std::size_t expected = 0;
  for (const QPPair& qp : enumerate_pairs(scene, 2, 3.0)) {
    if (qp.q.cwiseAbs().maxCoeff() != 2) continue;
    const AffinePlane rp = scene.plane(qp.q, qp.p).realize();
    if (!(std::abs(rp.base(0) - 0.5) <= 0.5)) continue;
    ++expected;
    const bool found = std::any_of(got.begin(), got.end(), [&](const AffinePlane& p) {
      return std::abs(p.base(0) - rp.base(0)) < 1e-12;
    });
    CHECK(found);
  }
  CHECK(expected >= 3);  // 0, 1/2, 1 at least (possibly under both signs of q)
}

TEST_CASE("engine: scene assembly validates source, pair, norm, and ambient ball") {
  const TransferPair half = TransferPair::derive(DimensionFunction::power_law(1.0, 0.5), 1, 0);
  const TransferPair three_half =
      TransferPair::derive(DimensionFunction::power_law(1.0, 1.5), 1, 1);
  const NormSpec euclid = NormSpec::euclidean();

  CHECK_THROWS_AS(MtpScene::make(nullptr, half, euclid, Ball(vec1(128.0), 150.0)), config_error);

  // transfer pair must match the source's ambient/plane dimensions
  CHECK_THROWS_AS(MtpScene::make(std::make_shared<DyadicSource>(2, 6), half, euclid,
                                 Ball(vec2(32.0, 32.0), 30.0)),
                  config_error);
  CHECK_THROWS_AS(MtpScene::make(std::make_shared<DyadicSource>(1, 8), three_half, euclid,
                                 Ball(vec1(128.0), 150.0)),
                  config_error);

  // only norms identical to the Euclidean norm are accepted
  CHECK_THROWS_AS(MtpScene::make(std::make_shared<DyadicSource>(2, 6), three_half,
                                 NormSpec::block_max(2, 1), Ball(vec2(32.0, 32.0), 30.0)),
                  config_error);
  CHECK_NOTHROW(MtpScene::make(std::make_shared<DyadicSource>(1, 8), half,
                               NormSpec::block_max(1, 1), Ball(vec1(128.0), 150.0)));

  // ambient ball: dimension and radius
  CHECK_THROWS_AS(MtpScene::make(std::make_shared<DyadicSource>(1, 8), half, euclid,
                                 Ball(vec2(0.0, 0.0), 1.0)),
                  config_error);
  CHECK_THROWS_AS(
      MtpScene::make(std::make_shared<DyadicSource>(1, 8), half, euclid, Ball(vec1(128.0), 0.0)),
      config_error);

  // envelopes must be positive and strictly decreasing
  auto bad_envelopes = [&](std::vector<double> ups) {
    auto src = std::make_shared<ExplicitSource>(
        1, 0, std::move(ups),
        std::vector<std::vector<AffinePlane>>{{point_plane(0.0)}, {point_plane(0.0)}});
    MtpScene::make(src, half, euclid, Ball(vec1(0.0), 2.0));
  };
  CHECK_THROWS_AS(bad_envelopes({0.1, 0.1}), config_error);
  CHECK_THROWS_AS(bad_envelopes({0.1, 0.2}), config_error);
  CHECK_THROWS_AS(bad_envelopes({0.1, 0.0}), config_error);

  // kept-ball radius: upsilon_tilde = g(upsilon)^(1/m)
  const MtpScene line = dyadic_line_scene();
  CHECK(line.k() == 1);
  CHECK(line.l() == 0);
  CHECK(line.upsilon(11) == std::ldexp(1.0, -6));
  CHECK(line.upsilon_tilde(11) == Approx(0.125).epsilon(1e-15));
  const MtpScene planes = vertical_lines_scene();
  CHECK(planes.k() == 2);
  CHECK(planes.l() == 1);
  CHECK(planes.upsilon(9) == std::ldexp(1.0, -6));
  CHECK(planes.upsilon_tilde(9) == Approx(0.125).epsilon(1e-15));
}

// ---------------------------------------------------------------------------
// Constants
// ---------------------------------------------------------------------------

TEST_CASE("engine: comparison constants and the packing window") {
  const NormSpec norm = NormSpec::euclidean();

  const EngineConstants line = EngineConstants::make(norm, 1, 0);
  CHECK(line.k == 1);
  CHECK(line.l == 0);
  CHECK(line.c1 == 0.5);  // min(1/2, H^1 of the unit interval-ball) = 1/2
  CHECK(line.c2 == 2.0);
  CHECK(line.c3 == Approx(1.0 / 19200.0).epsilon(1e-15));
  CHECK(line.d1 == 0.9);
  CHECK(line.d2 == 1.1);

  const EngineConstants plane = EngineConstants::make(norm, 2, 1);
  CHECK(plane.c1 == 0.5);
  CHECK(plane.c2 == Approx(3.14159265358979323846).epsilon(1e-15));
  // c3 = (1/(2^(k+3) 5^k 15^k)) (c1/c2)^2 with k = 2
  const double pi = 3.14159265358979323846;
  CHECK(plane.c3 == Approx((0.5 / pi) * (0.5 / pi) / 180000.0).epsilon(1e-12));
  CHECK(plane.d1 == 0.1125);
  CHECK(plane.d2 == 0.22743655784948918);

  const PackingWindow w0 = packing_window(0);
  CHECK(w0.d1 == 0.9);
  CHECK(w0.d2 == 1.1);
  const PackingWindow w1 = packing_window(1);
  CHECK(w1.d1 == 0.1125);
  CHECK(w1.d2 == 0.22743655784948918);
  CHECK_THROWS_AS(packing_window(2), config_error);
}

TEST_CASE("engine: packing window regenerates from the calibration instances") {
  // The frozen instance family: dyadic sizes 2^3..2^15 plus 76 log-uniform
  // sizes in [6.05, 32768] drawn with the frozen seed.
  std::vector<double> sizes;
  for (int j = 3; j <= 15; ++j) sizes.push_back(std::ldexp(1.0, j));
  const CounterRng rng(2024, 0);
  for (int i = 0; i < 76; ++i) {
    sizes.push_back(6.05 * std::exp(rng.uniform(static_cast<std::uint64_t>(i)) *
                                    std::log(32768.0 / 6.05)));
  }
  REQUIRE(sizes.size() == 89);

  // Reference line and container (deliberately non-dyadic center).
  const Vec center = vec2(std::sqrt(2.0), 1.0 / 3.0);
  const AffinePlane line = vertical_line(center(0), center);
  REQUIRE(line.tangent(0, 0) == 0.0);
  const double ty = line.tangent(1, 0);
  REQUIRE(std::abs(ty) == 1.0);
  const NormSpec norm = NormSpec::euclidean();

  // Linear-time replica of the greedy lattice packer: candidates u = 1.5 i in
  // index order; accepted points are monotone along the line, so only the
  // newest accepted point can lie within the separation of a candidate.
  auto fast_count = [&](double x) -> std::size_t {
    const double reach = x / 2.0 + 1.5;
    const auto lo = static_cast<std::int64_t>(std::ceil(-reach / 1.5));
    const auto hi = static_cast<std::int64_t>(std::floor(reach / 1.5));
    std::size_t count = 0;
    bool any = false;
    double last = 0.0;
    for (std::int64_t i = lo; i <= hi; ++i) {
      const double u = static_cast<double>(i) * 1.5;
      const double py = center(1) + ty * u;  // = plane.point_at(u), second coordinate
      const double t = py - center(1);
      if (!(std::sqrt(t * t) <= x / 2.0)) continue;
      if (any) {
        const double d = py - last;
        if (std::sqrt(d * d) <= 6.0) continue;
      }
      last = py;
      any = true;
      ++count;
    }
    return count;
  };

  double min_ratio = std::numeric_limits<double>::infinity();
  double max_ratio = 0.0;
  double min_x = 0.0;
  double max_x = 0.0;
  for (const double x : sizes) {
    const double ratio = static_cast<double>(fast_count(x)) / x;
    if (ratio < min_ratio) {
      min_ratio = ratio;
      min_x = x;
    }
    if (ratio > max_ratio) {
      max_ratio = ratio;
      max_x = x;
    }
  }

  const PackingWindow w = packing_window(1);
  CHECK(0.9 * min_ratio == w.d1);
  CHECK(1.1 * max_ratio == w.d2);
  CHECK(min_ratio == 0.125);  // count 1 at x = 8

  // The replica must agree with the reference packer on every instance small
  // enough to cross-check directly; that range covers both extremes.
  std::size_t checked = 0;
  for (const double x : sizes) {
    if (x > 2200.0) continue;
    const std::vector<Vec> pts = separated_pack(line, Ball(center, x / 2.0), 6.0, norm);
    CHECK(pts.size() == fast_count(x));
    ++checked;
  }
  CHECK(checked >= 45);
  CHECK(min_x <= 2200.0);
  CHECK(max_x <= 2200.0);
}

// ---------------------------------------------------------------------------
// Kept collections
// ---------------------------------------------------------------------------

TEST_CASE("engine: kept collection mines the dyadic line greedily") {
  const MtpScene scene = dyadic_line_scene();
  const EngineConstants cons = EngineConstants::make(scene.norm, 1, 0);
  const Ball b(vec1(128.0), 120.0);

  // Default: stop at the measure target H(B)/60 = 4.
  const KgbResult kgb = build_kgb(scene, cons, b, 11);
  CHECK(kgb.measure_target == Approx(4.0).epsilon(1e-14));
  CHECK(kgb.balls.size() == 16);
  CHECK(kgb.planes.size() == 16);
  CHECK(kgb.measure_sum == Approx(4.0).epsilon(1e-14));  // 16 balls of measure 1/4 each
  CHECK(kgb.vk_sum == 2.0);
  CHECK(kgb.first_shell == 11);
  CHECK(kgb.last_shell == 11);
  for (std::size_t i = 0; i < kgb.balls.size(); ++i) {
    const IndexedBall& ib = kgb.balls[i];
    CHECK(ib.shell == 11);
    CHECK(ib.ball.radius == 0.125);
    // greedy from the left edge: at 8.375 the 3-scaled ball exactly touches
    // the host boundary (rejected), so mining starts at 8.5 and advances 7
    // lattice points at a time (6 steps tie the 3-scaled balls: rejected too)
    CHECK(ib.ball.center(0) == 8.5 + 0.875 * static_cast<double>(i));
    CHECK(kgb.planes[i].l == 0);
    CHECK(kgb.planes[i].base(0) == ib.ball.center(0));
  }
  // asserted during the build, and re-checked here directly
  for (std::size_t i = 0; i < kgb.balls.size(); ++i) {
    CHECK(ball_contains(b, kgb.balls[i].ball.scaled(3.0), scene.norm));
    for (std::size_t j = i + 1; j < kgb.balls.size(); ++j) {
      CHECK(balls_disjoint(kgb.balls[i].ball.scaled(3.0), kgb.balls[j].ball.scaled(3.0),
                           scene.norm));
    }
  }

  // A mass quota keeps mining past the measure target.
  KgbOptions quota;
  quota.vk_quota = 2.5;
  const KgbResult more = build_kgb(scene, cons, b, 11, quota);
  CHECK(more.balls.size() == 20);
  CHECK(more.vk_sum == 2.5);
  CHECK(more.measure_sum == Approx(5.0).epsilon(1e-14));

  // Start-shell validation.
  CHECK_THROWS_AS(build_kgb(scene, cons, b, 0), config_error);
  CHECK_THROWS_AS(build_kgb(scene, cons, b, 49), config_error);
  // The start shell must already be fine against the host: upsilon_tilde(11)
  // = 1/8 is not below 1/10.
  CHECK_THROWS_AS(build_kgb(scene, cons, Ball(vec1(128.0), 1.0), 11), config_error);

  // A source with a single far-too-small shell exhausts before the target.
  const MtpScene sparse = explicit_point_scene({1e-6}, {{point_plane(0.4)}}, Ball(vec1(0.5), 2.0));
  try {
    build_kgb(sparse, cons, Ball(vec1(0.5), 0.5), 1);
    CHECK(false);
  } catch (const property_error& e) {
    CHECK(e.property() == "kept-collection-yield");
    CHECK(std::string(e.what()).find("exhausted") != std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Plane packings
// ---------------------------------------------------------------------------

TEST_CASE("engine: point packing fills one ball and flags misses") {
  const MtpScene scene = dyadic_line_scene();
  const EngineConstants cons = EngineConstants::make(scene.norm, 1, 0);
  const Ball a(vec1(10.0), 0.125);

  const PackingResult res = build_packing(scene, cons, point_plane(10.0), a, 11);
  CHECK(res.run.count == 1);
  CHECK(!res.run.empty);
  CHECK(res.upsilon == std::ldexp(1.0, -6));
  CHECK(res.separation == 6.0 * res.upsilon);
  CHECK(res.run.radius == res.upsilon);
  const Ball member = res.run.member(0);
  CHECK(member.center(0) == 10.0);
  CHECK(member.radius == res.upsilon);
  CHECK(res.union_measure == Approx(2.0 * res.upsilon).epsilon(1e-14));
  CHECK(res.lower_bound <= res.union_measure);
  CHECK(res.union_measure <= res.upper_bound);
  CHECK(res.cardinality_ratio == 1.0);

  // A point plane outside the half ball yields an empty flagged run.
  const PackingResult miss = build_packing(scene, cons, point_plane(10.07), a, 11);
  CHECK(miss.run.empty);
  CHECK(miss.run.count == 0);

  // 6 upsilon must stay below the host radius.
  CHECK_THROWS_AS(build_packing(scene, cons, point_plane(10.0), Ball(vec1(10.0), 0.08), 11),
                  config_error);
}

TEST_CASE("engine: line packing matches the reference greedy packer") {
  const MtpScene scene = vertical_lines_scene();
  const EngineConstants cons = EngineConstants::make(scene.norm, 2, 1);
  const Vec c = vec2(32.0, 32.0);
  const Ball a(c, 0.125);

  // Small run: r(A)/upsilon = 8 admits a single member, offset 3 upsilon.
  const PackingResult small = build_packing(scene, cons, vertical_line(32.0, c), a, 9);
  CHECK(small.run.count == 1);
  CHECK(small.upsilon == std::ldexp(1.0, -6));
  CHECK(std::abs(small.run.member(0).center(1) - 32.0) == 3.0 * small.upsilon);
  CHECK(small.run.member(0).center(0) == 32.0);
  CHECK(small.cardinality_ratio == 0.125);

  // Deep run: r(A)/upsilon = 8192; the closed-form index window must equal
  // the quadratic reference packer member for member.
  const PackingResult deep = build_packing(scene, cons, vertical_line(32.0, c), a, 14);
  CHECK(deep.upsilon == std::ldexp(1.0, -16));
  CHECK(deep.run.count == 1093);
  CHECK(deep.cardinality_ratio == Approx(1093.0 / 8192.0).epsilon(1e-15));
  CHECK(deep.cardinality_ratio >= cons.d1);
  CHECK(deep.cardinality_ratio <= cons.d2);
  CHECK(deep.run.step_len > deep.separation);
  CHECK(deep.lower_bound <= deep.union_measure);
  CHECK(deep.union_measure <= deep.upper_bound);
  const std::vector<Vec> ref =
      separated_pack(vertical_line(32.0, c), Ball(c, 0.0625), 6.0 * deep.upsilon, scene.norm);
  REQUIRE(ref.size() == 1093);
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const Ball m = deep.run.member(static_cast<std::int64_t>(i));
    CHECK(m.center(0) == ref[i](0));
    CHECK(m.center(1) == ref[i](1));
    CHECK(m.radius == deep.upsilon);
  }

  // A line missing the half ball is flagged empty.
  const PackingResult miss = build_packing(scene, cons, vertical_line(32.07, c), a, 14);
  CHECK(miss.run.empty);
}

// ---------------------------------------------------------------------------
// Cantor tree: dyadic line (k = 1)
// ---------------------------------------------------------------------------

TEST_CASE("engine: cantor tree on the dyadic line matches the frozen oracle") {
  const MtpScene scene = dyadic_line_scene();
  const Ball b0(vec1(128.0), 120.0);
  CantorOptions opts;
  opts.eta = 10.0;
  opts.max_depth = 3;
  const CantorTree tree = build_cantor(scene, b0, opts);

  REQUIRE(tree.level_counts.size() == 3);
  CHECK(tree.level_counts[0] == 1);
  CHECK(tree.level_counts[1] == 22);
  CHECK(tree.level_counts[2] == 44);
  REQUIRE(tree.level_mu_sums.size() == 3);
  for (const double s : tree.level_mu_sums) CHECK(s == Approx(1.0).epsilon(1e-9));
  CHECK(tree.r0 == std::ldexp(1.0, -16));
  CHECK(tree.constants.c3 == Approx(1.0 / 19200.0).epsilon(1e-15));
  CHECK(tree.constants.eta == 10.0);
  CHECK(tree.constants.epsilon_b0 > 0.0);

  // Root local level: 20 quota-mined shell-11 balls, then 2 interior-cover
  // balls at shell 16.
  REQUIRE(tree.root.local.has_value());
  const LocalLevel& root = *tree.root.local;
  CHECK(root.formula_sub_levels == 1601.0);  // floor(c2 eta / (c3 H(B))) + 1
  CHECK(root.allowed_sub_levels == 2);
  CHECK(root.used_sub_levels == 2);
  CHECK(root.cap_reason == "sub-level-cap");
  CHECK(root.sum_vk == 2.5078125);  // 20 * (1/8) + 2 * (1/256)
  REQUIRE(root.stages.size() == 2);
  const StageAudit& s1 = root.stages[0];
  CHECK(s1.stage == 1);
  CHECK(s1.g_shell == 11);
  CHECK(s1.last_shell == 11);
  CHECK(s1.upsilon == std::ldexp(1.0, -6));
  CHECK(s1.upsilon_tilde == 0.125);
  CHECK(s1.ball_count == 20);
  CHECK(s1.vk_sum == 2.5);
  CHECK(s1.vk_floor == Approx(120.0 / 19200.0).epsilon(1e-15));
  CHECK(s1.measure_sum == Approx(5.0).epsilon(1e-14));
  CHECK(s1.measure_target == Approx(4.0).epsilon(1e-14));
  CHECK(s1.min_child_radius == 0.125);
  CHECK(s1.max_child_radius == 0.125);
  CHECK(s1.epsilon_target == tree.constants.epsilon_b0);
  const StageAudit& s2 = root.stages[1];
  CHECK(s2.stage == 2);
  CHECK(s2.g_shell == 16);
  CHECK(s2.upsilon == std::ldexp(1.0, -16));
  CHECK(s2.upsilon_tilde == std::ldexp(1.0, -8));
  CHECK(s2.ball_count == 2);
  CHECK(s2.bprime_count == 2);
  CHECK(s2.bprime_family_count >= 2);
  CHECK(s2.bprime_family_measure ==
        Approx(static_cast<double>(s2.bprime_family_count) * 0.125).epsilon(1e-14));
  CHECK(s2.vk_sum == 0.0078125);  // 2 * (1/256)
  CHECK(s2.measure_target == Approx(2.0 * 0.125 / 60.0).epsilon(1e-15));
  CHECK(s2.f_ratio > 0.0);
  CHECK(s2.f_ratio <= 0.5);
  CHECK(s2.g_ratio > 0.0);
  CHECK(s2.g_ratio <= 0.5);
  CHECK(s2.leftover_fraction >= 0.5 - 1e-9);

  REQUIRE(root.entries.size() == 22);
  for (std::size_t i = 0; i < 20; ++i) {
    const KgbEntry& e = root.entries[i];
    CHECK(e.stage == 1);
    CHECK(e.shell == 11);
    CHECK(e.a.radius == 0.125);
    CHECK(e.a.center(0) == 8.5 + 0.875 * static_cast<double>(i));
    CHECK(e.vk == 0.125);
    CHECK(e.bprime_index == KgbEntry::kNoBprime);
    CHECK(e.pack.run.count == 1);
    CHECK(e.pack.upsilon == std::ldexp(1.0, -6));
    CHECK(e.pack.run.member(0).center(0) == e.a.center(0));  // point plane at the center
  }
  REQUIRE(root.b_primes.size() == 2);
  for (std::size_t i = 20; i < 22; ++i) {
    const KgbEntry& e = root.entries[i];
    CHECK(e.stage == 2);
    CHECK(e.shell == 16);
    CHECK(e.a.radius == std::ldexp(1.0, -8));
    CHECK(e.vk == std::ldexp(1.0, -8));
    REQUIRE(e.bprime_index < root.b_primes.size());
    const Ball& bp = root.b_primes[e.bprime_index];
    CHECK(bp.radius == 0.0625);  // half the smallest stage-1 child radius
    CHECK(ball_contains(bp, e.a.scaled(3.0), scene.norm));
    CHECK(e.pack.run.count == 1);
    CHECK(e.pack.upsilon == std::ldexp(1.0, -16));
  }

  // Mass split: mu = (vk / sum vk) / count per member.
  REQUIRE(tree.root.children.size() == 22);
  double child_mass = 0.0;
  for (std::size_t i = 0; i < 22; ++i) {
    const CantorNode& n = tree.root.children[i];
    CHECK(n.level == 2);
    CHECK(n.entry_index == i);
    CHECK(n.sub_level == (i < 20 ? 1 : 2));
    CHECK(n.ball.radius == (i < 20 ? std::ldexp(1.0, -6) : std::ldexp(1.0, -16)));
    CHECK(n.mu == Approx((i < 20 ? 0.125 : 0.00390625) / 2.5078125).epsilon(1e-14));
    child_mass += n.mu;
  }
  CHECK(child_mass == Approx(1.0).epsilon(1e-12));

  // Second-level locals: stage shells (18, 23) under the shell-11 children
  // and (28, 33) under the shell-16 children, one kept ball per stage.
  for (const CantorNode& n : tree.root.children) {
    REQUIRE(n.local.has_value());
    const LocalLevel& loc = *n.local;
    CHECK(loc.cap_reason == "sub-level-cap");
    REQUIRE(loc.stages.size() == 2);
    REQUIRE(loc.entries.size() == 2);
    const bool big = n.entry_index < 20;
    CHECK(loc.stages[0].g_shell == (big ? 18 : 28));
    CHECK(loc.stages[1].g_shell == (big ? 23 : 33));
    CHECK(loc.stages[0].ball_count == 1);
    CHECK(loc.stages[1].ball_count == 1);
    CHECK(loc.entries[0].pack.run.count == 1);
    CHECK(loc.entries[1].pack.run.count == 1);
    CHECK(n.children.empty());  // deepest local: children stay as runs
  }
  // Greedy start under the first child: the exact 3-scaled tie at 13 grid
  // steps is rejected, so the first kept center sits 12 steps left of c_B.
  const CantorNode& first = tree.root.children[0];
  CHECK(first.local->entries[0].a.center(0) == 8.5 - 12.0 * std::ldexp(1.0, -10));
  CHECK(first.local->entries[0].a.radius == std::ldexp(1.0, -10));

  // Determinism: an identical build serializes and hashes identically.
  const CantorTree again = build_cantor(scene, b0, opts);
  CHECK(tree.hash() == again.hash());
  CHECK(tree.serialize() == again.serialize());
  CHECK(tree.hash() == 0xcfd4ccda1b064828ULL);
}

// ---------------------------------------------------------------------------
// Cantor tree: vertical lines (k = 2)
// ---------------------------------------------------------------------------

TEST_CASE("engine: cantor tree on vertical lines matches the frozen oracle") {
  const MtpScene scene = vertical_lines_scene();
  const Ball b0(vec2(32.0, 32.0), 21.0);
  CantorOptions opts;
  opts.eta = 10.0;
  opts.max_depth = 3;
  const CantorTree tree = build_cantor(scene, b0, opts);

  REQUIRE(tree.level_counts.size() == 3);
  CHECK(tree.level_counts[0] == 1);
  CHECK(tree.level_counts[1] == 215);
  CHECK(tree.level_counts[2] == 807584040);
  for (const double s : tree.level_mu_sums) CHECK(s == Approx(1.0).epsilon(1e-9));
  CHECK(tree.r0 == std::ldexp(1.0, -16));

  REQUIRE(tree.root.local.has_value());
  const LocalLevel& root = *tree.root.local;
  CHECK(root.cap_reason == "sub-level-cap");
  REQUIRE(root.stages.size() == 2);
  CHECK(root.stages[0].g_shell == 9);
  CHECK(root.stages[0].ball_count == 40);
  CHECK(root.stages[0].upsilon_tilde == 0.125);
  CHECK(root.stages[0].vk_sum == 0.625);  // 40 * (1/8)^2
  CHECK(root.stages[1].g_shell == 14);
  CHECK(root.stages[1].ball_count == 5);
  CHECK(root.stages[1].bprime_count == 5);
  CHECK(root.sum_vk == 0.6250762939453125);  // + 5 * (1/256)^2
  REQUIRE(root.entries.size() == 45);
  for (std::size_t i = 0; i < 45; ++i) {
    const KgbEntry& e = root.entries[i];
    if (i < 40) {
      CHECK(e.stage == 1);
      CHECK(e.shell == 9);
      CHECK(e.a.radius == 0.125);
      CHECK(e.pack.run.count == 1);  // r(A)/upsilon = 8
    } else {
      CHECK(e.stage == 2);
      CHECK(e.shell == 14);
      CHECK(e.a.radius == std::ldexp(1.0, -8));
      CHECK(e.pack.run.count == 35);  // r(A)/upsilon = 256
    }
    CHECK(e.pack.run.step_len > e.pack.separation);
  }

  // Level 2: 40 + 5 * 35 = 215 realized nodes; their locals hold one kept
  // ball per stage, and the runs of those entries form level 3.
  REQUIRE(tree.root.children.size() == 215);
  std::size_t big_nodes = 0;
  std::int64_t level3 = 0;
  for (const CantorNode& n : tree.root.children) {
    REQUIRE(n.local.has_value());
    const LocalLevel& loc = *n.local;
    REQUIRE(loc.stages.size() == 2);
    REQUIRE(loc.entries.size() == 2);
    const bool big = n.ball.radius == std::ldexp(1.0, -6);
    if (big) ++big_nodes;
    CHECK(n.ball.radius == (big ? std::ldexp(1.0, -6) : std::ldexp(1.0, -16)));
    CHECK(loc.stages[0].g_shell == (big ? 16 : 26));
    CHECK(loc.stages[1].g_shell == (big ? 21 : 31));
    CHECK(loc.entries[0].pack.run.count == (big ? 137 : 139811));
    CHECK(loc.entries[1].pack.run.count == (big ? 4369 : 4473925));
    level3 += loc.entries[0].pack.run.count + loc.entries[1].pack.run.count;
  }
  CHECK(big_nodes == 40);
  CHECK(level3 == 807584040);

  const CantorTree again = build_cantor(scene, b0, opts);
  CHECK(tree.hash() == again.hash());
  CHECK(tree.hash() == 0xc7ee177cc6c3901aULL);
}

// ---------------------------------------------------------------------------
// Cantor tree: mass target scaling and stage caps
// ---------------------------------------------------------------------------

TEST_CASE("engine: mass target scaling and stage caps") {
  const MtpScene scene = dyadic_line_scene();
  const Ball b0(vec1(128.0), 120.0);

  // Doubling eta doubles the root quota: 40 + 2 entries instead of 20 + 2.
  CantorOptions eta20;
  eta20.eta = 20.0;
  const CantorTree t20 = build_cantor(scene, b0, eta20);
  REQUIRE(t20.level_counts.size() == 3);
  CHECK(t20.level_counts[0] == 1);
  CHECK(t20.level_counts[1] == 42);
  CHECK(t20.level_counts[2] == 84);
  CHECK(t20.root.local->stages[0].ball_count == 40);
  CHECK(t20.root.local->stages[1].ball_count == 2);

  // A tiny stage-2 entry budget caps the root at one stage; the deeper
  // locals fall below the budget and keep both stages.
  CantorOptions tight;
  tight.stage2_entry_budget = 1.0;
  const CantorTree tb = build_cantor(scene, b0, tight);
  CHECK(tb.root.local->cap_reason == "stage2-entry-budget");
  CHECK(tb.root.local->stages.size() == 1);
  CHECK(tb.root.local->b_primes.empty());
  CHECK(tb.level_counts[1] == 20);
  CHECK(tb.level_counts[2] == 40);

  // max_sub_levels = 1 drops stage 2 everywhere.
  CantorOptions one;
  one.max_sub_levels = 1;
  const CantorTree t1 = build_cantor(scene, b0, one);
  CHECK(t1.root.local->cap_reason == "sub-level-cap");
  CHECK(t1.root.local->stages.size() == 1);
  CHECK(t1.level_counts[1] == 20);
  CHECK(t1.level_counts[2] == 20);

  // A source whose second shell is too coarse for the interior cover stops
  // after stage 1 with the scale-exhausted cap.
  std::vector<std::vector<AffinePlane>> shells;
  shells.push_back(point_row(-1.2, 1.2, 0.01));
  shells.push_back(point_row(-1.2, 1.2, 0.01));
  const MtpScene stuck = explicit_point_scene({1e-4, 1e-5}, std::move(shells), Ball(vec1(0.0), 2.0));
  CantorOptions depth2;
  depth2.max_depth = 2;
  const CantorTree ts = build_cantor(stuck, Ball(vec1(0.0), 1.0), depth2);
  CHECK(ts.root.local->cap_reason == "scale-exhausted");
  CHECK(ts.root.local->stages.size() == 1);
  REQUIRE(ts.level_counts.size() == 2);
  CHECK(ts.level_counts[0] == 1);
  CHECK(ts.level_counts[1] == 3);
  CHECK(ts.r0 == 1e-4);
  for (const double s : ts.level_mu_sums) CHECK(s == Approx(1.0).epsilon(1e-9));
}

// ---------------------------------------------------------------------------
// Property report
// ---------------------------------------------------------------------------

TEST_CASE("engine: property report re-checks finished trees") {
  const MtpScene scene = dyadic_line_scene();
  const CantorTree tree = build_cantor(scene, Ball(vec1(128.0), 120.0), {});

  const PropertyReport rep = check_cantor_properties(tree);
  CHECK(rep.all_pass());
  CHECK(rep.items.size() == 18);
  const char* names[] = {"root-level-exact",        "level-separation",
                         "stage-packing-separation", "stage-mass-floor",
                         "stage-scale-halving",      "stage-count-formula",
                         "kept-ball-containment",    "kept-ball-separation",
                         "kept-collection-yield",    "interior-cover-yield",
                         "leftover-space-floor",     "pack-centers-on-plane",
                         "pack-ball-containment",    "pack-separation",
                         "pack-measure-sandwich",    "pack-cardinality-window",
                         "mass-additivity",          "level-mass-sums"};
  for (const char* name : names) {
    const auto it = std::find_if(rep.items.begin(), rep.items.end(),
                                 [&](const PropertyReport::Item& item) { return item.name == name; });
    REQUIRE(it != rep.items.end());
    CHECK(it->pass);
    CHECK(it->checks >= 1);
  }
  CHECK(!rep.summary().empty());

  // Skimming mass off one child must break mass conservation.
  CantorTree bent = tree;
  bent.root.children[0].mu *= 1.01;
  const PropertyReport broken = check_cantor_properties(bent);
  CHECK(!broken.all_pass());

  const MtpScene planes = vertical_lines_scene();
  const CantorTree tree2 = build_cantor(planes, Ball(vec2(32.0, 32.0), 21.0), {});
  const PropertyReport rep2 = check_cantor_properties(tree2);
  CHECK(rep2.all_pass());
  CHECK(rep2.items.size() == 18);
}

// ---------------------------------------------------------------------------
// Tree measure queries
// ---------------------------------------------------------------------------

TEST_CASE("engine: tree measure point queries") {
  const MtpScene scene = dyadic_line_scene();
  const Ball b0(vec1(128.0), 120.0);
  const CantorTree tree = build_cantor(scene, b0, {});

  CHECK(mu_of_set(tree, b0) == Approx(1.0).epsilon(1e-9));
  CHECK(mu_of_set(tree, Ball(vec1(128.0), 1200.0)) == Approx(1.0).epsilon(1e-9));

  // Between two stage-1 subtrees (and far from the interior-cover region,
  // which lives inside B/2 = [68, 188]) the measure vanishes exactly.
  CHECK(mu_of_set(tree, Ball(vec1(11.4375), 0.1)) == 0.0);
  CHECK(mu_of_set(tree, Ball(vec1(-5.0), 1.0)) == 0.0);

  // A ball around one deepest-level member carries at least that member's
  // mass and at most its level-2 subtree's mass.
  const CantorNode& n = tree.root.children[0];
  const KgbEntry& e = n.local->entries[0];
  const Ball probe(e.pack.run.member(0).center, e.pack.run.radius);
  const double got = mu_of_set(tree, probe);
  CHECK(got >= e.pack.run.mu_each - 1e-15);
  CHECK(got <= n.mu + 1e-15);
}

// ---------------------------------------------------------------------------
// Measure bound verifier
// ---------------------------------------------------------------------------

TEST_CASE("engine: measure bound verifier is deterministic and matches a recount") {
  const MtpScene scene = dyadic_line_scene();
  const CantorTree tree = build_cantor(scene, Ball(vec1(128.0), 120.0), {});

  const MeasureBoundReport rep = verify_cantor_measure_bound(tree, 400, 11);
  CHECK(rep.samples == 400);
  CHECK(rep.nonzero_samples >= 1);
  CHECK(rep.nonzero_samples <= 400);
  CHECK(rep.r0 == tree.r0);
  CHECK(std::isfinite(rep.max_node_ratio));
  CHECK(std::isfinite(rep.max_sample_ratio));
  CHECK(rep.max_sample_ratio > 0.0);

  // The node scan is an exact maximum over construction balls at levels >= 2.
  CHECK(rep.max_node_ratio == Approx(max_tree_node_ratio(tree)).epsilon(1e-12));
  CHECK(rep.max_node_ratio == Approx(15838.021334843765).epsilon(1e-9));

  const MeasureBoundReport same = verify_cantor_measure_bound(tree, 400, 11);
  CHECK(same.max_sample_ratio == rep.max_sample_ratio);
  CHECK(same.nonzero_samples == rep.nonzero_samples);
  const MeasureBoundReport other = verify_cantor_measure_bound(tree, 400, 12);
  CHECK(other.max_node_ratio == rep.max_node_ratio);  // seed-independent part
}

// ---------------------------------------------------------------------------
// Hypothesis checks
// ---------------------------------------------------------------------------

TEST_CASE("engine: full-measure fractions on dense and sparse sources") {
  const MtpScene scene = dyadic_line_scene();
  // Dyadic shells place a point within upsilon_tilde/2 of everywhere, so all
  // fractions are exactly 1.
  const std::vector<CoverageRow> rows = check_full_measure(scene, Ball(vec1(128.0), 5.0), 5, 7, 6, 500);
  REQUIRE(rows.size() == 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK(rows[i].g == 5 + static_cast<int>(i));
    CHECK(rows[i].fraction == 1.0);
  }

  // A single resonant point covers only a thin slice of the probe ball.
  const MtpScene sparse = explicit_point_scene({1e-4}, {{point_plane(0.5)}}, Ball(vec1(0.5), 2.0));
  const std::vector<CoverageRow> thin = check_full_measure(sparse, Ball(vec1(0.5), 0.45), 1, 1, 0, 1001);
  REQUIRE(thin.size() == 1);
  CHECK(thin[0].fraction > 0.0);
  CHECK(thin[0].fraction < 0.1);
}

TEST_CASE("engine: ball separation predicate on exact cases and fuzz") {
  const NormSpec norm = NormSpec::euclidean();

  const SeparationCheck ok = check_ball_separation(Ball(vec1(0.0), 1.0), Ball(vec1(0.5), 0.2), 3.0, norm);
  CHECK(ok.hypotheses);
  CHECK(ok.radius_ok);
  CHECK(ok.containment_ok);

  // c below 3 never satisfies the premises.
  CHECK(!check_ball_separation(Ball(vec1(0.0), 1.0), Ball(vec1(0.5), 0.2), 2.0, norm).hypotheses);
  // a swallowed by the scaled m fails the premises.
  CHECK(!check_ball_separation(Ball(vec1(0.0), 1.0), Ball(vec1(0.0), 10.0), 3.0, norm).hypotheses);
  // disjoint balls fail the premises.
  CHECK(!check_ball_separation(Ball(vec1(0.0), 1.0), Ball(vec1(5.0), 0.2), 3.0, norm).hypotheses);

  const CounterRng rng(99, 3);
  std::uint64_t ctr = 0;
  std::size_t satisfied = 0;
  for (int it = 0; it < 3000; ++it) {
    const int dim = 1 + (it % 2);
    Vec ca(dim), cm(dim);
    for (int d = 0; d < dim; ++d) ca(d) = rng.uniform(ctr++, -1.0, 1.0);
    const double ra = rng.uniform(ctr++, 0.05, 1.5);
    for (int d = 0; d < dim; ++d) cm(d) = ca(d) + rng.uniform(ctr++, -2.0, 2.0);
    const double rm = rng.uniform(ctr++, 0.01, 2.0);
    const double c = 3.0 + static_cast<double>(it % 4) * 0.5;
    const SeparationCheck chk = check_ball_separation(Ball(ca, ra), Ball(cm, rm), c, norm);
    if (chk.hypotheses) {
      ++satisfied;
      CHECK(chk.radius_ok);
      CHECK(chk.containment_ok);
    }
  }
  CHECK(satisfied >= 250);
}

// ---------------------------------------------------------------------------
// Rejection paths
// ---------------------------------------------------------------------------

TEST_CASE("engine: construction rejections name the failing gate or bound") {
  const MtpScene scene = dyadic_line_scene();
  const Ball b0(vec1(128.0), 120.0);

  // Source whose only shell leaves no gap between 6 upsilon and the kept
  // radius: the gate scan exhausts and names the radius gap.
  const MtpScene coarse =
      explicit_point_scene({0.04}, {point_row(-1.5, 1.5, 0.1)}, Ball(vec1(0.0), 2.0));
  try {
    build_cantor(coarse, Ball(vec1(0.0), 1.0), {});
    CHECK(false);
  } catch (const property_error& e) {
    CHECK(e.property() == "radius-gap-gate");
    CHECK(std::string(e.what()).find("no shell satisfies") != std::string::npos);
  }

  // The root ball must sit inside the source's uniformly dense region.
  try {
    build_cantor(scene, Ball(vec1(128.0), 140.0), {});
    CHECK(false);
  } catch (const config_error& e) {
    CHECK(std::string(e.what()).find("dense region") != std::string::npos);
  }

  // r^{-k} f(r) must blow up at zero for the transfer machinery to refine.
  {
    auto src = std::make_shared<DyadicSource>(1, 8);
    const TransferPair flat = TransferPair::derive(DimensionFunction::power_law(1.0, 1.0), 1, 0);
    const MtpScene lin = MtpScene::make(src, flat, NormSpec::euclidean(), Ball(vec1(128.0), 150.0));
    try {
      build_cantor(lin, b0, {});
      CHECK(false);
    } catch (const config_error& e) {
      CHECK(std::string(e.what()).find("unbounded") != std::string::npos);
    }
  }

  // Demanding the untruncated stage counts is provably infeasible.
  {
    CantorOptions full;
    full.full_sub_level_counts = true;
    try {
      build_cantor(scene, b0, full);
      CHECK(false);
    } catch (const infeasibility_error& e) {
      CHECK(e.requested() == 1601.0);
      CHECK(e.feasible() == 2.0);
    }
  }

  // Realized-node budget.
  {
    const MtpScene planes = vertical_lines_scene();
    CantorOptions small;
    small.max_nodes = 100;
    try {
      build_cantor(planes, Ball(vec2(32.0, 32.0), 21.0), small);
      CHECK(false);
    } catch (const infeasibility_error& e) {
      CHECK(e.requested() == 216.0);  // root + 215 level-2 nodes
      CHECK(e.feasible() == 100.0);
    }
  }

  // Option validation.
  CantorOptions bad;
  bad.eta = 0.0;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);
  bad = {};
  bad.max_depth = 0;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);
  bad = {};
  bad.max_sub_levels = 0;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);
  bad = {};
  bad.max_sub_levels = 3;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);
  bad = {};
  bad.stage2_entry_budget = 0.0;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);
  bad = {};
  bad.max_nodes = 0;
  CHECK_THROWS_AS(build_cantor(scene, b0, bad), config_error);

  // Root ball validation: dimension and ambient containment.
  CHECK_THROWS_AS(build_cantor(scene, Ball(vec2(0.0, 0.0), 1.0), {}), config_error);
  CHECK_THROWS_AS(build_cantor(scene, Ball(vec1(128.0), 160.0), {}), config_error);
}
