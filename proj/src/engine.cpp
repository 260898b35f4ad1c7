// linforms — implementation of the limsup-set Cantor construction engine.
//
// Layout:
//   1. plane sources (explicit, dyadic grid, Diophantine resonant planes);
//   2. scene validation and the comparison constants;
//   3. kept collections (build_kgb);
//   4. plane packings (build_packing);
//   5. the Cantor tree: local levels, interior covers, mass assignment,
//      serialization and hashing;
//   6. property re-checks, tree measure queries, measure-bound sampling,
//      coverage scans, and the ball separation predicate.
// SPDX-License-Identifier: MIT
#include "linforms/engine.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>
#include <unordered_map>
#include <utility>

#include "linforms/rng.hpp"

namespace linforms {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string hx(double v) {
  std::ostringstream os;
  os << std::hexfloat << v;
  return os.str();
}

double pow_int(double base, int e) {
  double r = 1.0;
  for (int i = 0; i < e; ++i) r *= base;
  return r;
}

double sq(double x) { return x * x; }

/// True when the norm is identical to the Euclidean norm, so Lebesgue ball
/// geometry and the packing calibration apply without rescaling.
bool euclidean_unit(const NormSpec& norm) {
  if (norm.kind == NormSpec::Kind::Euclidean) return true;
  return norm.n == 1 && norm.m == 1;  // sqrt(1) * max of one block = |x|_2
}

/// Closed-form evaluation that stays meaningful for r >= 1: a pure power law
/// extends directly; a log-corrected form has no sensible value there and
/// reports +infinity (callers treat such a scale as "too coarse").  Measure
/// arguments inside the construction are always < 1; this is used for
/// envelopes of shallow shells and for diagnostics on large host balls.
double power_extend(const DimensionFunction& fn, double r) {
  if (!(r > 0.0)) throw config_error("power extension: needs r > 0");
  if (r < 1.0) return fn.eval_extended(r);
  if (fn.log_power == 0.0) return fn.coeff * std::pow(r, fn.power);
  return kInf;
}

/// Lebesgue bookkeeping in dimension dim (unit ball volume uv).
struct MeasureCtx {
  int dim = 1;
  double uv = 2.0;

  double vol(double r) const { return uv * pow_int(r, dim); }
};

/// Lebesgue measure of b ∩ (w-neighborhood of the plane): a slab cap for
/// codimension 1, a lens (ball-ball intersection) for a point plane.
double cap_measure(const MeasureCtx& ctx, const NormSpec& norm, const AffinePlane& plane,
                   const Ball& b, double w) {
  if (plane.l == 0) return ball_intersection_measure(Ball(plane.base, w), b, norm);
  const double te = plane.normals.row(0).dot(b.center) - plane.offsets(0);
  if (ctx.dim == 1) {
    const double lo = std::max(-w - te, -b.radius);
    const double hi = std::min(w - te, b.radius);
    return std::max(0.0, hi - lo);
  }
  if (ctx.dim == 2) return disk_slab_area(b.radius, -w - te, w - te);
  throw config_error("cap measure: dimension " + std::to_string(ctx.dim) + " not supported");
}

/// Copy of `plane` re-anchored at a point lying on it.
AffinePlane rebase(const AffinePlane& plane, const Vec& point) {
  AffinePlane out = plane;
  out.base = point;
  return out;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : bytes) {
    h ^= static_cast<std::uint64_t>(ch);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// ExplicitSource
// ---------------------------------------------------------------------------

ExplicitSource::ExplicitSource(int ambient_dim, int plane_dim, std::vector<double> upsilon,
                               std::vector<std::vector<AffinePlane>> shells)
    : ambient_(ambient_dim),
      plane_dim_(plane_dim),
      upsilon_(std::move(upsilon)),
      shells_(std::move(shells)) {
  if (ambient_ < 1) throw config_error("explicit source: ambient dimension must be >= 1");
  if (plane_dim_ < 0 || plane_dim_ >= ambient_)
    throw config_error("explicit source: plane dimension must lie in [0, ambient)");
  if (upsilon_.empty()) throw config_error("explicit source: need at least one shell");
  if (upsilon_.size() != shells_.size())
    throw config_error("explicit source: envelope list and shell list sizes differ");
  for (std::size_t i = 0; i < upsilon_.size(); ++i) {
    if (!(upsilon_[i] > 0.0) || !std::isfinite(upsilon_[i]))
      throw config_error("explicit source: envelopes must be positive and finite");
    if (i > 0 && !(upsilon_[i] < upsilon_[i - 1]))
      throw config_error("explicit source: envelopes must be strictly decreasing");
    for (const AffinePlane& p : shells_[i]) {
      if (p.k != ambient_ || p.l != plane_dim_)
        throw config_error("explicit source: a plane does not match the source dimensions");
    }
  }
}

double ExplicitSource::upsilon(int shell) const {
  if (shell < 1 || shell > max_shell())
    throw config_error("explicit source: shell " + std::to_string(shell) + " out of range");
  return upsilon_[static_cast<std::size_t>(shell - 1)];
}

std::vector<AffinePlane> ExplicitSource::planes_near(int shell, const Ball& region) const {
  if (shell < 1 || shell > max_shell())
    throw config_error("explicit source: shell " + std::to_string(shell) + " out of range");
  (void)region;  // hand-made lists are small; near-misses are allowed
  return shells_[static_cast<std::size_t>(shell - 1)];
}

std::string ExplicitSource::describe() const {
  std::ostringstream os;
  os << "explicit source: " << upsilon_.size() << " shells in R^" << ambient_
     << ", plane dimension " << plane_dim_;
  return os.str();
}

// ---------------------------------------------------------------------------
// DyadicSource
// ---------------------------------------------------------------------------

DyadicSource::DyadicSource(int ambient_dim, int span_exponent)
    : ambient_(ambient_dim), e_(span_exponent) {
  if (ambient_ != 1 && ambient_ != 2)
    throw config_error("dyadic source: ambient dimension must be 1 or 2");
  if (e_ < 1 || e_ > 24) throw config_error("dyadic source: span exponent must lie in [1, 24]");
}

double DyadicSource::spacing(int shell) const {
  if (shell < 1 || shell > kMaxShell)
    throw config_error("dyadic source: shell " + std::to_string(shell) + " out of range");
  return std::ldexp(1.0, e_ - shell);
}

double DyadicSource::upsilon(int shell) const {
  if (shell < 1 || shell > kMaxShell)
    throw config_error("dyadic source: shell " + std::to_string(shell) + " out of range");
  return std::ldexp(1.0, 2 * (e_ - shell));
}

std::vector<AffinePlane> DyadicSource::planes_near(int shell, const Ball& region) const {
  if (shell < 1 || shell > kMaxShell)
    throw config_error("dyadic source: shell " + std::to_string(shell) + " out of range");
  if (region.center.size() != ambient_)
    throw config_error("dyadic source: region dimension mismatch");
  const double s = spacing(shell);
  const double c0 = region.center(0);
  const double top_i = std::ldexp(1.0, shell);  // grid index range is [0, 2^shell]
  std::vector<AffinePlane> out;
  // one spare index on each side so no touching plane is ever missed
  const double lo_f = std::max(0.0, std::ceil((c0 - region.radius) / s) - 1.0);
  const double hi_f = std::min(top_i, std::floor((c0 + region.radius) / s) + 1.0);
  if (lo_f > hi_f) return out;
  if (hi_f - lo_f + 1.0 > 5e7)
    throw config_error("dyadic source: region spans " + fmt(hi_f - lo_f + 1.0) +
                       " planes; shrink the region or use a shallower shell");
  const auto lo = static_cast<std::int64_t>(lo_f);
  const auto hi = static_cast<std::int64_t>(hi_f);
  out.reserve(static_cast<std::size_t>(hi - lo + 1));
  for (std::int64_t i = lo; i <= hi; ++i) {
    const double x = static_cast<double>(i) * s;
    AffinePlane p;
    if (ambient_ == 1) {
      p.k = 1;
      p.l = 0;
      p.normals = Eigen::MatrixXd::Identity(1, 1);
      p.offsets = Vec::Constant(1, x);
      p.base = Vec::Constant(1, x);
      p.tangent = Eigen::MatrixXd::Zero(1, 0);
    } else {
      p.k = 2;
      p.l = 1;
      p.normals = Eigen::MatrixXd::Zero(1, 2);
      p.normals(0, 0) = 1.0;
      p.offsets = Vec::Constant(1, x);
      p.base = Vec::Zero(2);
      p.base(0) = x;
      p.tangent = Eigen::MatrixXd::Zero(2, 1);
      p.tangent(1, 0) = 1.0;
    }
    out.push_back(std::move(p));
  }
  return out;
}

Ball DyadicSource::dense_region() const {
  const double half = std::ldexp(1.0, e_ - 1);
  return Ball(Vec::Constant(ambient_, half), half);
}

std::string DyadicSource::describe() const {
  std::ostringstream os;
  os << "dyadic grid source on [0, 2^" << e_ << "] in R^" << ambient_;
  return os.str();
}

// ---------------------------------------------------------------------------
// DiophantineSource
// ---------------------------------------------------------------------------

DiophantineSource::DiophantineSource(SceneConfig scene, int max_shell, double m_bound)
    : scene_(std::move(scene)), max_shell_(max_shell), m_bound_(m_bound) {
  if (max_shell_ < 1) throw config_error("diophantine source: max shell must be >= 1");
  if (!(m_bound_ > 0.0) || !std::isfinite(m_bound_))
    throw config_error("diophantine source: numerator bound must be positive and finite");
  double prev = kInf;
  for (int j = 1; j <= max_shell_; ++j) {
    const double u = scene_.psi(static_cast<double>(j)) / j;
    if (!(u > 0.0) || !std::isfinite(u))
      throw config_error("diophantine source: psi(q)/q must be positive and finite");
    if (!(u < prev))
      throw config_error("diophantine source: psi(q)/q must be strictly decreasing, fails at q = " +
                         std::to_string(j));
    prev = u;
  }
  cache_.resize(static_cast<std::size_t>(max_shell_) + 1);
}

int DiophantineSource::ambient_dim() const { return scene_.n * scene_.m; }
int DiophantineSource::plane_dim() const { return scene_.n * scene_.m - scene_.m; }

double DiophantineSource::upsilon(int shell) const {
  if (shell < 1 || shell > max_shell_)
    throw config_error("diophantine source: shell " + std::to_string(shell) + " out of range");
  return scene_.psi(static_cast<double>(shell)) / shell;
}

const std::vector<AffinePlane>& DiophantineSource::shell_planes(int shell) const {
  auto& slot = cache_[static_cast<std::size_t>(shell)];
  if (!slot) {
    // one enumeration up to `shell`, bucketed by |q|_sup; fill every shallower
    // shell still empty (shell content does not depend on the cap).
    std::vector<std::vector<AffinePlane>> buckets(static_cast<std::size_t>(shell) + 1);
    for (const QPPair& qp : enumerate_pairs(scene_, shell, m_bound_)) {
      const int qs = qp.q.cwiseAbs().maxCoeff();
      if (qs < 1 || qs > shell) continue;
      buckets[static_cast<std::size_t>(qs)].push_back(scene_.plane(qp.q, qp.p).realize());
    }
    for (int j = 1; j <= shell; ++j) {
      auto& other = cache_[static_cast<std::size_t>(j)];
      if (!other) other = std::move(buckets[static_cast<std::size_t>(j)]);
    }
  }
  return *slot;
}

std::vector<AffinePlane> DiophantineSource::planes_near(int shell, const Ball& region) const {
  if (shell < 1 || shell > max_shell_)
    throw config_error("diophantine source: shell " + std::to_string(shell) + " out of range");
  const std::vector<AffinePlane>& all = shell_planes(shell);
  // Euclidean distance under-estimates the product norm by at most
  // sqrt(n m), so this slack keeps every plane meeting the region.
  const double slack = std::sqrt(static_cast<double>(scene_.n) * scene_.m);
  std::vector<AffinePlane> out;
  for (const AffinePlane& p : all) {
    if (p.euclid_dist(region.center) <= region.radius * slack + kGeomTol) out.push_back(p);
  }
  return out;
}

Ball DiophantineSource::dense_region() const {
  const int d = scene_.n * scene_.m;
  return Ball(Vec::Constant(d, 0.5), 0.5);
}

std::string DiophantineSource::describe() const {
  std::ostringstream os;
  os << "resonant planes of " << scene_.m << " linear forms in " << scene_.n
     << " variables, shells up to " << max_shell_ << ", numerator bound " << m_bound_;
  return os.str();
}

// ---------------------------------------------------------------------------
// Scene and constants
// ---------------------------------------------------------------------------

MtpScene MtpScene::make(std::shared_ptr<const PlaneSource> source, TransferPair pair,
                        NormSpec norm, Ball omega) {
  if (!source) throw config_error("scene: missing plane source");
  const int k = source->ambient_dim();
  const int l = source->plane_dim();
  if (pair.k != k || pair.l != l)
    throw config_error("scene: transfer pair (k = " + std::to_string(pair.k) + ", l = " +
                       std::to_string(pair.l) + ") does not match the source (ambient " +
                       std::to_string(k) + ", plane dimension " + std::to_string(l) + ")");
  if (!euclidean_unit(norm))
    throw config_error(
        "scene: the construction engine requires a norm identical to the Euclidean one "
        "(Euclidean, or a one-block max norm of one variable); rescale the scene");
  if (omega.center.size() != k) throw config_error("scene: ambient ball dimension mismatch");
  if (!(omega.radius > 0.0)) throw config_error("scene: ambient ball radius must be positive");
  const int last = std::min(source->max_shell(), 64);
  double prev = kInf;
  for (int j = 1; j <= last; ++j) {
    const double u = source->upsilon(j);
    if (!(u > 0.0) || !std::isfinite(u) || !(u < prev))
      throw config_error("scene: envelopes must be positive, finite and strictly decreasing");
    prev = u;
  }
  MtpScene s;
  s.source = std::move(source);
  s.pair = std::move(pair);
  s.norm = norm;
  s.omega = std::move(omega);
  return s;
}

double MtpScene::upsilon_tilde(int shell) const {
  const double u = source->upsilon(shell);
  const double g = power_extend(pair.g, u);
  if (!std::isfinite(g)) return kInf;
  return m() == 1 ? g : std::pow(g, 1.0 / m());
}

// Frozen from tools/calibrate_pack (the regeneration test recomputes them):
// d1 = 0.9 * smallest and d2 = 1.1 * largest measured count/(r/upsilon) ratio
// over the calibration instances.
namespace {
constexpr double kLineWindowLo = 0.1125;                // 0x1.ccccccccccccdp-4
constexpr double kLineWindowHi = 0.22743655784948918;   // 0x1.d1ca420f06e5ep-3
}  // namespace

PackingWindow packing_window(int l) {
  if (l == 0) return {0.9, 1.1};  // a valid point-plane packing has exactly one ball
  if (l == 1) return {kLineWindowLo, kLineWindowHi};
  throw config_error("packing window: plane dimension " + std::to_string(l) +
                     " has no calibrated window (supported: 0 and 1)");
}

EngineConstants EngineConstants::make(const NormSpec& norm, int k, int l) {
  if (k != 1 && k != 2)
    throw config_error(
        "engine constants: ambient dimension must be 1 or 2 for the built-in measure formulas");
  if (l < 0 || l >= k) throw config_error("engine constants: need 0 <= l < k");
  if (!euclidean_unit(norm))
    throw config_error("engine constants: the norm must be identical to the Euclidean one");
  EngineConstants c;
  c.k = k;
  c.l = l;
  const double uv = unit_ball_volume(norm, k);
  c.c1 = std::min(0.5, uv);
  c.c2 = std::max(2.0, uv);
  c.c3 = sq(c.c1 / c.c2) / (pow_int(2.0, k + 3) * pow_int(5.0, k) * pow_int(15.0, k));
  const PackingWindow w = packing_window(l);
  c.d1 = w.d1;
  c.d2 = w.d2;
  return c;
}

// ---------------------------------------------------------------------------
// Kept collections
// ---------------------------------------------------------------------------

KgbResult build_kgb(const MtpScene& scene, const EngineConstants& cons, const Ball& b,
                    int g_shell, const KgbOptions& opts) {
  (void)cons;
  const int k = scene.k();
  if (b.center.size() != k) throw config_error("kept collection: ball dimension mismatch");
  if (g_shell < 1 || g_shell > scene.source->max_shell())
    throw config_error("kept collection: start shell out of range");
  const MeasureCtx ctx{k, unit_ball_volume(scene.norm, k)};
  {
    const double ut0 = scene.upsilon_tilde(g_shell);
    if (!std::isfinite(ut0) || !(ut0 < b.radius / 10.0))
      throw config_error("kept collection: need child radius < r/10 at the start shell (have " +
                         fmt(ut0) + " against r = " + fmt(b.radius) + ")");
  }
  KgbResult res;
  res.measure_target = ctx.vol(b.radius) / (4.0 * pow_int(15.0, k));
  res.first_shell = g_shell;
  res.last_shell = g_shell;
  const double quota = opts.vk_quota;
  auto done = [&res, quota] {
    return res.measure_sum >= res.measure_target && res.vk_sum >= quota;
  };

  const int max_shell = scene.source->max_shell();
  for (int j = g_shell; !done(); ++j) {
    if (j > max_shell || j - g_shell > opts.max_extra_shells) {
      std::ostringstream os;
      os << "kept collection for the radius-" << fmt(b.radius) << " host exhausted the source "
         << "over shells " << g_shell << ".." << std::min(j, max_shell) << ": measure "
         << fmt(res.measure_sum) << " of target " << fmt(res.measure_target) << ", mass weight "
         << fmt(res.vk_sum) << " of quota " << fmt(quota);
      throw property_error("kept-collection-yield", os.str());
    }
    const double ut = scene.upsilon_tilde(j);
    if (!std::isfinite(ut)) continue;
    const double reach = b.radius - 3.0 * ut;
    if (!(reach > 0.0)) continue;
    // accept margin: candidates clear the bounds by a relative 1e-12 so the
    // exact post-asserts below can never flip on a final rounding
    auto try_candidate = [&](const Vec& c, int shell, std::uint32_t pi,
                             const AffinePlane& plane) {
      if (scene.norm(c - b.center) > reach * (1.0 - 1e-12)) return;
      for (const IndexedBall& prev : res.balls) {
        if (scene.norm(c - prev.ball.center) <= 3.0 * (ut + prev.ball.radius) * (1.0 + 1e-12))
          return;
      }
      if (res.balls.size() >= opts.max_balls)
        throw infeasibility_error("kept collection exceeds the ball budget",
                                  static_cast<double>(res.balls.size() + 1),
                                  static_cast<double>(opts.max_balls));
      res.balls.push_back({Ball(c, ut), shell, pi});
      res.planes.push_back(plane);
      res.measure_sum += ctx.vol(ut);
      res.vk_sum += pow_int(ut, k);
      res.last_shell = shell;
    };
    const std::vector<AffinePlane> planes = scene.source->planes_near(j, b);
    for (std::uint32_t pi = 0; pi < planes.size() && !done(); ++pi) {
      const AffinePlane& plane = planes[pi];
      const double dperp = plane.euclid_dist(b.center);
      if (dperp > reach) continue;
      if (plane.l == 0) {
        try_candidate(plane.base, j, pi, plane);
      } else if (plane.l == 1) {
        const double h = 1.5 * ut;
        const double w2 = sq(reach) - sq(dperp);
        if (!(w2 >= 0.0)) continue;
        const double w = std::sqrt(w2);
        const double u0 = plane.coords_of(b.center)(0);
        const auto ilo = static_cast<std::int64_t>(std::ceil((u0 - w) / h)) - 1;
        const auto ihi = static_cast<std::int64_t>(std::floor((u0 + w) / h)) + 1;
        for (std::int64_t i = ilo; i <= ihi && !done(); ++i) {
          Vec u(1);
          u(0) = static_cast<double>(i) * h;
          try_candidate(plane.point_at(u), j, pi, plane);
        }
      } else {
        throw config_error("kept collection: plane dimension " + std::to_string(plane.l) +
                           " not supported by the lattice scan (supported: 0 and 1)");
      }
    }
  }
  // re-assert the three structural properties on the finished collection
  for (std::size_t i = 0; i < res.balls.size(); ++i) {
    const Ball tri = res.balls[i].ball.scaled(3.0);
    if (!ball_contains(b, tri, scene.norm))
      throw property_error("kept-ball-containment", "kept ball " + std::to_string(i) +
                                                        " has its 3-scaled copy outside the host");
    for (std::size_t j2 = i + 1; j2 < res.balls.size(); ++j2) {
      if (!balls_disjoint(tri, res.balls[j2].ball.scaled(3.0), scene.norm))
        throw property_error("kept-ball-separation",
                             "kept balls " + std::to_string(i) + " and " + std::to_string(j2) +
                                 " have meeting 3-scaled copies");
    }
  }
  if (!(res.measure_sum >= res.measure_target))
    throw property_error("kept-collection-yield", "kept collection measure " +
                                                      fmt(res.measure_sum) + " below target " +
                                                      fmt(res.measure_target));
  return res;
}

// ---------------------------------------------------------------------------
// Plane packings
// ---------------------------------------------------------------------------

Ball RunPack::member(std::int64_t i) const {
  if (i < 0 || i >= count) throw config_error("run pack: member index out of range");
  return Ball(start + static_cast<double>(i) * step, radius);
}

PackingResult build_packing(const MtpScene& scene, const EngineConstants& cons,
                            const AffinePlane& plane, const Ball& a, int shell) {
  const int k = scene.k();
  if (a.center.size() != k || plane.k != k) throw config_error("packing: dimension mismatch");
  const double ups = scene.upsilon(shell);
  if (!(6.0 * ups < a.radius))
    throw config_error("packing: need 6 * upsilon < r(A), have upsilon = " + fmt(ups) +
                       " against r(A) = " + fmt(a.radius));
  const MeasureCtx ctx{k, unit_ball_volume(scene.norm, k)};
  PackingResult res;
  res.upsilon = ups;
  res.separation = 6.0 * ups;
  RunPack& run = res.run;
  run.radius = ups;
  run.start = a.center;
  run.step = Vec::Zero(k);

  const double dperp = plane.euclid_dist(a.center);
  const double half = a.radius / 2.0;
  if (dperp > half) {
    run.empty = true;
    return res;
  }
  // the full assert set applies to hosts centred on the plane (the engine's
  // own case); off-centre standalone calls still get the universal ones
  const bool centered = dperp <= 1e-9 * (1.0 + a.center.norm());

  if (plane.l == 0) {
    if (scene.norm(plane.base - a.center) > half) {
      run.empty = true;
      return res;
    }
    run.count = 1;
    run.start = plane.base;
  } else if (plane.l == 1) {
    const double h = 1.5 * ups;
    // lattice points sit at u = i * h in tangent coordinates from the
    // plane's base — the grid separated_pack scans; u_c is the tangent
    // coordinate of the host centre (exactly 0 for planes rebased there)
    const double u_c = plane.coords_of(a.center)(0);
    const double w2 = sq(half) - sq(dperp);
    if (!(w2 >= 0.0)) {
      run.empty = true;
      return res;
    }
    auto inside = [&](double i) {
      const double du = i * h - u_c;
      return sq(du) + sq(dperp) <= sq(half);
    };
    const double w = std::sqrt(w2);
    double lo_f = std::ceil((u_c - w) / h);
    double hi_f = std::floor((u_c + w) / h);
    // snap the window to the exact membership predicate (FP-safe boundary)
    for (int it = 0; it < 4 && inside(lo_f - 1.0); ++it) lo_f -= 1.0;
    while (lo_f <= hi_f && !inside(lo_f)) lo_f += 1.0;
    for (int it = 0; it < 4 && inside(hi_f + 1.0); ++it) hi_f += 1.0;
    while (hi_f >= lo_f && !inside(hi_f)) hi_f -= 1.0;
    if (lo_f > hi_f) {
      run.empty = true;
      return res;
    }
    // the admissible indices form one integer interval; the scan keeps the
    // first one and then every 5th (gap 5 * 1.5 * upsilon = 7.5 upsilon,
    // the first spacing clearing the 6 upsilon separation)
    run.count = static_cast<std::int64_t>(std::floor((hi_f - lo_f) / 5.0)) + 1;
    run.u_start = lo_f * h - u_c;
    run.step_len = 5.0 * h;
    run.start = plane.base + (lo_f * h) * plane.tangent.col(0);
    run.step = (5.0 * h) * plane.tangent.col(0);
  } else {
    throw config_error("packing: plane dimension " + std::to_string(plane.l) +
                       " not supported (supported: 0 and 1)");
  }

  res.union_measure = static_cast<double>(run.count) * ctx.vol(ups);
  res.upper_bound = cap_measure(ctx, scene.norm, plane, a, ups);
  res.lower_bound = cap_measure(ctx, scene.norm, plane, Ball(a.center, half), ups) /
                    pow_int(6.0, k);
  res.cardinality_ratio = static_cast<double>(run.count) / std::pow(a.radius / ups, plane.l);

  const double rel = 1.0 + 1e-12;
  const double umax =
      std::max(std::abs(run.u_start),
               std::abs(run.u_start + static_cast<double>(run.count - 1) * run.step_len));
  const double reach = plane.l == 0 ? dperp : std::hypot(dperp, umax);
  if (!(reach <= half * rel))
    throw property_error("pack-ball-containment", "member centres leave the half ball: reach " +
                                                      fmt(reach) + " against " + fmt(half));
  if (!(reach + 3.0 * ups <= a.radius * rel))
    throw property_error("pack-ball-containment", "a 3-scaled member leaves the host ball");
  if (run.count >= 2 && !(run.step_len > res.separation))
    throw property_error("pack-separation", "member gap " + fmt(run.step_len) +
                                                " does not exceed " + fmt(res.separation));
  const bool sound =
      run.count < 2 ||
      run.step_len >= 1e4 * std::numeric_limits<double>::epsilon() * (1.0 + run.start.norm());
  if (sound) {
    for (std::int64_t i : {std::int64_t{0}, run.count / 2, run.count - 1}) {
      const Vec c = run.start + static_cast<double>(i) * run.step;
      if (plane.euclid_dist(c) > 1e-9 * (1.0 + c.norm()))
        throw property_error("pack-centers-on-plane",
                             "member " + std::to_string(i) + " is off its plane");
    }
  }
  if (centered && !(res.lower_bound <= res.union_measure * rel))
    throw property_error("pack-measure-sandwich", "union measure " + fmt(res.union_measure) +
                                                      " below the lower bound " +
                                                      fmt(res.lower_bound));
  if (!(res.union_measure <= res.upper_bound * rel))
    throw property_error("pack-measure-sandwich", "union measure " + fmt(res.union_measure) +
                                                      " above the cap bound " +
                                                      fmt(res.upper_bound));
  if (centered && !(res.cardinality_ratio >= cons.d1 * (1.0 - 1e-12) &&
                    res.cardinality_ratio <= cons.d2 * rel))
    throw property_error("pack-cardinality-window",
                         "count ratio " + fmt(res.cardinality_ratio) + " outside [" +
                             fmt(cons.d1) + ", " + fmt(cons.d2) + "]");
  return res;
}

// ---------------------------------------------------------------------------
// Cantor tree: local levels
// ---------------------------------------------------------------------------

namespace {

/// Lower bound on the Lebesgue measure of (half of B) minus the 4-scaled kept
/// balls: exact interval sweep in dimension 1, inclusion bound (overlaps
/// double-subtracted) in dimension 2.
double leftover_lower_bound(const MeasureCtx& ctx, const NormSpec& norm, const Ball& B,
                            const std::vector<Ball>& kept) {
  const Ball half = B.scaled(0.5);
  const double base = ctx.vol(half.radius);
  if (ctx.dim == 1) {
    std::vector<std::pair<double, double>> iv;
    iv.reserve(kept.size());
    const double lo = half.center(0) - half.radius;
    const double hi = half.center(0) + half.radius;
    for (const Ball& a : kept) {
      const double l4 = a.center(0) - 4.0 * a.radius;
      const double h4 = a.center(0) + 4.0 * a.radius;
      const double clo = std::max(lo, l4);
      const double chi = std::min(hi, h4);
      if (clo < chi) iv.emplace_back(clo, chi);
    }
    return base - interval_union_length(std::move(iv));
  }
  double removed = 0.0;
  for (const Ball& a : kept) removed += ball_intersection_measure(a.scaled(4.0), half, norm);
  return base - removed;
}

struct BPrimeFamily {
  std::vector<Vec> centers;
  double radius = 0.0;
  double measure = 0.0;
};

/// Maximal greedy family of pairwise disjoint radius-rp balls centred in
/// half-B and clear of every 4-scaled kept ball.  Candidate centres form a
/// pitch-rp grid anchored at the centre of B, visited inner rings first
/// (ties by grid index); the greedy disjoint selection over equal radii is
/// exactly the 5r-cover rule.  Deterministic.
BPrimeFamily interior_cover_family(const MeasureCtx& ctx, const NormSpec& norm, const Ball& B,
                                   const std::vector<Ball>& kept, double rp) {
  BPrimeFamily fam;
  fam.radius = rp;
  const double half = B.radius / 2.0;
  const auto M = static_cast<std::int64_t>(std::floor(half / rp)) + 1;
  if (M > 4096)
    throw infeasibility_error("interior cover grid too fine for the host ball",
                              static_cast<double>(M), 4096.0);
  struct Cand {
    double d2 = 0.0;
    std::int64_t i = 0;
    std::int64_t j = 0;
  };
  auto center_at = [&](std::int64_t i, std::int64_t j) {
    Vec c = B.center;
    c(0) += static_cast<double>(i) * rp;
    if (ctx.dim == 2) c(1) += static_cast<double>(j) * rp;
    return c;
  };
  auto admissible = [&](const Vec& c) {
    if (norm(c - B.center) > half) return false;
    for (const Ball& a : kept) {
      if (norm(c - a.center) <= 4.0 * a.radius) return false;
    }
    return true;
  };
  std::vector<Cand> cands;
  const std::int64_t jM = ctx.dim == 2 ? M : 0;
  for (std::int64_t i = -M; i <= M; ++i) {
    for (std::int64_t j = -jM; j <= jM; ++j) {
      const Vec c = center_at(i, j);
      if (!admissible(c)) continue;
      const double d2 = sq(static_cast<double>(i) * rp) + sq(static_cast<double>(j) * rp);
      cands.push_back({d2, i, j});
    }
  }
  std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
    if (a.d2 != b.d2) return a.d2 < b.d2;
    if (a.i != b.i) return a.i < b.i;
    return a.j < b.j;
  });
  // greedy selection with a uniform grid (cell 2rp, +-1 neighborhood)
  const double cell = 2.0 * rp;
  auto cell_key = [&](const Vec& c) {
    const auto cx = static_cast<std::int64_t>(std::floor(c(0) / cell));
    const auto cy = ctx.dim == 2 ? static_cast<std::int64_t>(std::floor(c(1) / cell)) : 0;
    return std::make_pair(cx, cy);
  };
  auto pack_key = [](std::int64_t cx, std::int64_t cy) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(cx)) << 32) |
           static_cast<std::uint64_t>(static_cast<std::uint32_t>(cy));
  };
  std::unordered_map<std::uint64_t, std::vector<std::size_t>> grid;
  for (const Cand& cd : cands) {
    const Vec c = center_at(cd.i, cd.j);
    const auto [cx, cy] = cell_key(c);
    bool ok = true;
    for (std::int64_t dx = -1; dx <= 1 && ok; ++dx) {
      for (std::int64_t dy = -1; dy <= 1 && ok; ++dy) {
        const auto it = grid.find(pack_key(cx + dx, cy + dy));
        if (it == grid.end()) continue;
        for (std::size_t si : it->second) {
          if (norm(c - fam.centers[si]) <= 2.0 * rp) {
            ok = false;
            break;
          }
        }
      }
    }
    if (!ok) continue;
    grid[pack_key(cx, cy)].push_back(fam.centers.size());
    fam.centers.push_back(c);
  }
  fam.measure = static_cast<double>(fam.centers.size()) * ctx.vol(rp);
  return fam;
}

/// First shell from `from` passing the refinement gates for a host of
/// headroom radius `headroom` (child radius < headroom/10, envelope gap
/// 6 upsilon < child radius, at least one mass-formula child).  For stages
/// past the first, min_f/min_g carry the previous stage's smallest child
/// values of f and g and force both to halve; pass +inf to skip.
/// Returns 0 when the source is exhausted, reporting the last failing gate.
int scan_gates(const MtpScene& scene, const EngineConstants& cons, double headroom, double min_f,
               double min_g, int from, std::string* fail_name, std::string* fail_detail) {
  const int k = scene.k();
  std::string name = "radius-gap-gate";
  std::string detail = "no shell scanned";
  for (int j = std::max(from, 1); j <= scene.source->max_shell(); ++j) {
    const double up = scene.upsilon(j);
    const double ut = scene.upsilon_tilde(j);
    if (!std::isfinite(ut)) {
      name = "radius-gap-gate";
      detail = "child radius not finite at shell " + std::to_string(j);
      continue;
    }
    if (!(6.0 * up < ut)) {
      name = "radius-gap-gate";
      detail = "6 upsilon = " + fmt(6.0 * up) + " not below the child radius " + fmt(ut) +
               " at shell " + std::to_string(j);
      continue;
    }
    if (!(ut < headroom / 10.0)) {
      name = "radius-gap-gate";
      detail = "child radius " + fmt(ut) + " not below host/10 = " + fmt(headroom / 10.0) +
               " at shell " + std::to_string(j);
      continue;
    }
    const double fy = power_extend(scene.pair.f, up);
    if (!(std::floor(fy / (cons.c3 * pow_int(up, k))) >= 1.0)) {
      name = "cardinality-gate";
      detail = "f(upsilon)/(c3 upsilon^k) = " + fmt(fy / (cons.c3 * pow_int(up, k))) +
               " below 1 at shell " + std::to_string(j);
      continue;
    }
    if (std::isfinite(min_f)) {
      const double gy = power_extend(scene.pair.g, up);
      if (!(fy <= 0.5 * min_f) || !(gy <= 0.5 * min_g)) {
        name = "halving-gate";
        detail = "f or g at upsilon(" + std::to_string(j) +
                 ") does not halve the previous stage's smallest child value";
        continue;
      }
    }
    return j;
  }
  if (fail_name) *fail_name = name;
  if (fail_detail) *fail_detail = detail;
  return 0;
}

struct TreeBuilder {
  const MtpScene& scene;
  const EngineConstants& cons;
  const CantorOptions& opts;
  MeasureCtx ctx;
  std::size_t realized_nodes = 1;  // the root

  LocalLevel build_local(const Ball& B, double muB, bool is_root) const;
  void refine(CantorNode& node);
};

LocalLevel TreeBuilder::build_local(const Ball& B, double muB, bool is_root) const {
  LocalLevel loc;
  const int k = scene.k();
  const double rB = B.radius;
  const double Vk = pow_int(rB, k);
  const double HB = ctx.vol(rB);

  // ---- stage 1: kept collection of the whole ball ----
  std::string gate_name;
  std::string gate_detail;
  const int G1 = scan_gates(scene, cons, rB, kInf, kInf, 1, &gate_name, &gate_detail);
  if (G1 == 0)
    throw property_error(gate_name, "no shell satisfies the refinement gates for r(B) = " +
                                        fmt(rB) + ": " + gate_detail);

  KgbOptions kopts;
  const double target_vk = Vk / (4.0 * pow_int(15.0, k));
  if (is_root) {
    // mine proportionally to eta so the measure scales as 1/eta, capped so
    // the removed 4-scaled balls can never eat half of B/2
    kopts.vk_quota = std::min(cons.eta * target_vk / 8.0,
                              0.9 * Vk / (pow_int(2.0, k + 1) * pow_int(4.0, k)));
  }
  kopts.max_balls = opts.max_nodes;
  const KgbResult kgb1 = build_kgb(scene, cons, B, G1, kopts);

  auto add_entries = [&](const KgbResult& kgb, int stage, std::uint32_t bprime_index) {
    for (std::size_t i = 0; i < kgb.balls.size(); ++i) {
      const IndexedBall& ib = kgb.balls[i];
      KgbEntry e;
      e.a = ib.ball;
      e.plane = rebase(kgb.planes[i], ib.ball.center);
      e.shell = ib.shell;
      e.stage = stage;
      e.plane_index = ib.plane_index;
      e.bprime_index = bprime_index;
      e.vk = pow_int(ib.ball.radius, k);
      e.pack = build_packing(scene, cons, e.plane, e.a, ib.shell);
      if (e.pack.run.empty || e.pack.run.count < 1)
        throw property_error("pack-centers-on-plane",
                             "a kept centre lost its host plane during packing");
      loc.entries.push_back(std::move(e));
    }
  };
  add_entries(kgb1, 1, KgbEntry::kNoBprime);

  double min_f = kInf;
  double min_g = kInf;
  double dmin = kInf;
  for (const KgbEntry& e : loc.entries) {
    min_f = std::min(min_f, power_extend(scene.pair.f, e.a.radius));
    min_g = std::min(min_g, power_extend(scene.pair.g, e.a.radius));
    dmin = std::min(dmin, e.a.radius);
  }

  const double fB_over_vk = power_extend(scene.pair.f, rB) / Vk;
  auto audit_stage = [&](int stage, int g_shell, std::size_t first_entry) {
    StageAudit s;
    s.stage = stage;
    s.g_shell = g_shell;
    s.last_shell = g_shell;
    s.upsilon = scene.upsilon(g_shell);
    s.upsilon_tilde = scene.upsilon_tilde(g_shell);
    s.vk_floor = cons.c3 * Vk;
    s.epsilon_target = is_root ? cons.epsilon_b0 : cons.epsilon_b;
    s.min_child_radius = kInf;
    for (std::size_t i = first_entry; i < loc.entries.size(); ++i) {
      const KgbEntry& e = loc.entries[i];
      s.last_shell = std::max(s.last_shell, e.shell);
      s.min_child_radius = std::min(s.min_child_radius, e.a.radius);
      s.max_child_radius = std::max(s.max_child_radius, e.a.radius);
      const double up = scene.upsilon(e.shell);
      s.epsilon_achieved = std::max(
          s.epsilon_achieved, pow_int(up, k) / power_extend(scene.pair.f, up) * fB_over_vk);
      s.ball_count += 1;
    }
    return s;
  };

  StageAudit a1 = audit_stage(1, G1, 0);
  a1.vk_sum = kgb1.vk_sum;
  a1.measure_sum = kgb1.measure_sum;
  a1.measure_target = kgb1.measure_target;
  if (!(a1.vk_sum >= a1.vk_floor * (1.0 - 1e-9)))
    throw property_error("stage-mass-floor", "stage 1 mass weight " + fmt(a1.vk_sum) +
                                                 " below the floor " + fmt(a1.vk_floor));
  loc.stages.push_back(a1);

  // ---- stage count ----
  const double formula =
      is_root ? std::floor(cons.c2 * cons.eta / (cons.c3 * HB)) + 1.0
              : std::floor(power_extend(scene.pair.f, rB) / (cons.c3 * Vk)) + 1.0;
  loc.formula_sub_levels = formula;
  if (!is_root && !(formula >= 2.0))
    throw property_error("cardinality-gate",
                         "the stage count formula gives " + fmt(formula) + " < 2 for r(B) = " +
                             fmt(rB) + "; the host ball is too coarse for the transfer pair");
  if (opts.full_sub_level_counts && formula > opts.max_sub_levels)
    throw infeasibility_error("full stage realization requested: the mass formula demands " +
                                  fmt(formula) + " stages against the engine cap " +
                                  std::to_string(opts.max_sub_levels),
                              formula, static_cast<double>(opts.max_sub_levels));
  int allowed = static_cast<int>(std::min<double>(formula, opts.max_sub_levels));
  if (static_cast<double>(allowed) < formula) loc.cap_reason = "sub-level-cap";

  // ---- stage 2: kept collections over the interior cover ----
  if (allowed >= 2) {
    const double rp = dmin / 2.0;
    const int G2 =
        scan_gates(scene, cons, rp, min_f, min_g, kgb1.last_shell + 1, nullptr, nullptr);
    double predicted = 0.0;
    if (G2 > 0) predicted = cons.c3 * Vk / pow_int(scene.upsilon_tilde(G2), k);
    if (G2 == 0) {
      allowed = 1;
      loc.cap_reason = "scale-exhausted";
    } else if (predicted > opts.stage2_entry_budget) {
      allowed = 1;
      loc.cap_reason = "stage2-entry-budget";
    } else {
      std::vector<Ball> kept1;
      kept1.reserve(loc.entries.size());
      for (const KgbEntry& e : loc.entries) kept1.push_back(e.a);
      const double Hhalf = ctx.vol(rB / 2.0);
      const double lo_lb = leftover_lower_bound(ctx, scene.norm, B, kept1);
      if (!(lo_lb >= 0.5 * Hhalf * (1.0 - 1e-9)))
        throw property_error("leftover-space-floor",
                             "surviving space lower bound " + fmt(lo_lb) +
                                 " below half of H(B/2) = " + fmt(0.5 * Hhalf));
      const BPrimeFamily fam = interior_cover_family(ctx, scene.norm, B, kept1, rp);
      const double fam_floor = cons.c1 / (2.0 * cons.c2 * pow_int(5.0, k)) * Hhalf;
      if (!(fam.measure >= fam_floor * (1.0 - 1e-9)))
        throw property_error("interior-cover-yield", "interior cover measure " +
                                                         fmt(fam.measure) + " below the floor " +
                                                         fmt(fam_floor));

      const std::size_t first2 = loc.entries.size();
      double acc = 0.0;
      const double floor2 = cons.c3 * Vk;
      for (std::size_t bi = 0; bi < fam.centers.size() && acc < floor2; ++bi) {
        const Ball bp(fam.centers[bi], rp);
        KgbOptions k2opts;
        k2opts.max_balls = opts.max_nodes;
        const KgbResult kgb2 = build_kgb(scene, cons, bp, G2, k2opts);
        const auto bidx = static_cast<std::uint32_t>(loc.b_primes.size());
        add_entries(kgb2, 2, bidx);
        loc.b_primes.push_back(bp);
        acc += kgb2.vk_sum;
      }
      if (!(acc >= floor2))
        throw property_error("stage-mass-floor",
                             "stage 2 accumulated mass weight " + fmt(acc) + " of the floor " +
                                 fmt(floor2) + " after exhausting the interior cover");
      StageAudit a2 = audit_stage(2, G2, first2);
      a2.vk_sum = acc;
      for (std::size_t i = first2; i < loc.entries.size(); ++i) {
        a2.measure_sum += ctx.vol(loc.entries[i].a.radius);
        if (!ball_contains(B, loc.entries[i].a.scaled(3.0), scene.norm))
          throw property_error("kept-ball-containment",
                               "a stage 2 kept ball leaves the host ball");
      }
      a2.measure_target =
          static_cast<double>(loc.b_primes.size()) * ctx.vol(rp) / (4.0 * pow_int(15.0, k));
      a2.f_ratio = power_extend(scene.pair.f, scene.upsilon(G2)) / min_f;
      a2.g_ratio = power_extend(scene.pair.g, scene.upsilon(G2)) / min_g;
      if (!(a2.f_ratio <= 0.5 && a2.g_ratio <= 0.5))
        throw property_error("stage-scale-halving",
                             "stage 2 does not halve f and g: ratios " + fmt(a2.f_ratio) +
                                 ", " + fmt(a2.g_ratio));
      a2.leftover_fraction = lo_lb / Hhalf;
      a2.bprime_count = loc.b_primes.size();
      a2.bprime_family_count = fam.centers.size();
      a2.bprime_family_measure = fam.measure;
      loc.stages.push_back(a2);
    }
  }
  loc.allowed_sub_levels = allowed;
  loc.used_sub_levels = static_cast<int>(loc.stages.size());

  // ---- separation across all kept balls of the local level ----
  for (std::size_t i = 0; i < loc.entries.size(); ++i) {
    for (std::size_t j = i + 1; j < loc.entries.size(); ++j) {
      const double dist = scene.norm(loc.entries[i].a.center - loc.entries[j].a.center);
      if (!(dist > 3.0 * (loc.entries[i].a.radius + loc.entries[j].a.radius)))
        throw property_error("kept-ball-separation",
                             "kept balls " + std::to_string(i) + " and " + std::to_string(j) +
                                 " (stages " + std::to_string(loc.entries[i].stage) + ", " +
                                 std::to_string(loc.entries[j].stage) + ") are not 3-separated");
    }
  }

  // ---- mass split ----
  double sum_vk = 0.0;
  for (const KgbEntry& e : loc.entries) sum_vk += e.vk;
  loc.sum_vk = sum_vk;
  double mass_check = 0.0;
  for (KgbEntry& e : loc.entries) {
    const double share = muB * (e.vk / sum_vk);
    e.pack.run.mu_each = share / static_cast<double>(e.pack.run.count);
    mass_check += e.pack.run.mu_each * static_cast<double>(e.pack.run.count);
  }
  if (!(std::abs(mass_check - muB) <= 1e-9 * std::max(1.0, std::abs(muB))))
    throw property_error("mass-additivity", "children masses sum to " + fmt(mass_check) +
                                                " against mu(B) = " + fmt(muB));
  return loc;
}

void TreeBuilder::refine(CantorNode& node) {
  if (node.level >= opts.max_depth) return;
  node.local = build_local(node.ball, node.mu, node.level == 1);
  if (node.level > opts.max_depth - 2) return;  // deepest local: children stay as runs
  LocalLevel& loc = *node.local;
  std::size_t total = 0;
  for (const KgbEntry& e : loc.entries) total += static_cast<std::size_t>(e.pack.run.count);
  if (realized_nodes + total > opts.max_nodes)
    throw infeasibility_error("tree exceeds the realized-node budget",
                              static_cast<double>(realized_nodes + total),
                              static_cast<double>(opts.max_nodes));
  realized_nodes += total;
  node.children.reserve(total);
  for (std::uint32_t ei = 0; ei < loc.entries.size(); ++ei) {
    KgbEntry& e = loc.entries[ei];
    e.first_child = node.children.size();
    for (std::int64_t mi = 0; mi < e.pack.run.count; ++mi) {
      CantorNode ch;
      ch.ball = e.pack.run.member(mi);
      ch.level = node.level + 1;
      ch.sub_level = e.stage;
      ch.shell = e.shell;
      ch.entry_index = ei;
      ch.member_index = mi;
      ch.mu = e.pack.run.mu_each;
      node.children.push_back(std::move(ch));
    }
  }
  for (CantorNode& ch : node.children) refine(ch);
}

}  // namespace

CantorTree build_cantor(const MtpScene& scene, const Ball& b0, const CantorOptions& opts) {
  if (!(opts.eta > 0.0)) throw config_error("cantor tree: eta must be positive");
  if (opts.max_depth < 1) throw config_error("cantor tree: max_depth must be >= 1");
  if (opts.max_sub_levels < 1 || opts.max_sub_levels > 2)
    throw config_error("cantor tree: the engine realizes one or two stages per local level");
  if (!(opts.stage2_entry_budget > 0.0))
    throw config_error("cantor tree: the stage 2 entry budget must be positive");
  if (opts.max_nodes < 1) throw config_error("cantor tree: max_nodes must be positive");
  if (b0.center.size() != scene.k())
    throw config_error("cantor tree: root ball dimension mismatch");
  if (!ball_contains(scene.omega, b0, scene.norm))
    throw config_error("cantor tree: the root ball must lie inside the ambient ball");
  {
    const Ball dense = scene.source->dense_region();
    if (std::isfinite(dense.radius) &&
        scene.norm(b0.center - dense.center) + b0.radius > dense.radius + kGeomTol)
      throw config_error(
          "cantor tree: the root ball must lie inside the source's uniformly dense region " +
          fmt(dense.radius) + " around its centre (near the support boundary the "
          "kept-collection yield genuinely degenerates)");
  }
  if (scene.pair.ratio_limit != LimitAtZero::Infinite)
    throw config_error(
        "cantor tree: the transfer pair must have r^-k f(r) unbounded as r -> 0 "
        "(otherwise the comparison with full-dimensional measure never kicks in)");

  CantorTree tree;
  tree.scene = scene;
  tree.options = opts;
  tree.b0 = b0;
  tree.constants = EngineConstants::make(scene.norm, scene.k(), scene.l());
  tree.constants.eta = opts.eta;
  {
    const EngineConstants& c = tree.constants;
    const double base = (1.0 / (2.0 * c.d2)) * sq(c.c1 / c.c2) *
                        (c.c3 / (pow_int(2.0, c.k) * pow_int(4.0, c.k)));
    tree.constants.epsilon_b = base;
    tree.constants.epsilon_b0 = base * power_extend(scene.pair.f, b0.radius) / opts.eta;
  }
  tree.root.ball = b0;
  tree.root.level = 1;
  tree.root.mu = 1.0;

  TreeBuilder builder{scene, tree.constants, opts,
                      MeasureCtx{scene.k(), unit_ball_volume(scene.norm, scene.k())}};
  builder.refine(tree.root);

  tree.level_counts.assign(static_cast<std::size_t>(opts.max_depth), 0);
  tree.level_mu_sums.assign(static_cast<std::size_t>(opts.max_depth), 0.0);
  double r0 = kInf;
  std::function<void(const CantorNode&)> walk = [&](const CantorNode& n) {
    tree.level_counts[static_cast<std::size_t>(n.level - 1)] += 1;
    tree.level_mu_sums[static_cast<std::size_t>(n.level - 1)] += n.mu;
    if (n.local && n.children.empty()) {
      for (const KgbEntry& e : n.local->entries) {
        tree.level_counts[static_cast<std::size_t>(n.level)] +=
            static_cast<std::size_t>(e.pack.run.count);
        tree.level_mu_sums[static_cast<std::size_t>(n.level)] +=
            e.pack.run.mu_each * static_cast<double>(e.pack.run.count);
      }
    }
    for (const CantorNode& ch : n.children) walk(ch);
  };
  walk(tree.root);
  if (tree.root.local) {
    for (const KgbEntry& e : tree.root.local->entries) r0 = std::min(r0, e.pack.run.radius);
    tree.r0 = r0;
  }
  for (std::size_t i = 0; i < tree.level_mu_sums.size(); ++i) {
    if (!(std::abs(tree.level_mu_sums[i] - 1.0) <= 1e-9))
      throw property_error("level-mass-sums", "level " + std::to_string(i + 1) +
                                                  " masses sum to " +
                                                  fmt(tree.level_mu_sums[i]));
  }
  return tree;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

std::string CantorTree::serialize() const {
  std::ostringstream os;
  auto ball_line = [&os](const Ball& b) {
    os << hx(b.radius);
    for (Eigen::Index i = 0; i < b.center.size(); ++i) os << ' ' << hx(b.center(i));
    os << '\n';
  };
  os << "linforms-tree v1\n";
  os << "k " << scene.k() << " l " << scene.l() << " m " << scene.m() << '\n';
  auto fn_line = [&os](const char* tag, const DimensionFunction& fn) {
    os << tag << ' ' << hx(fn.coeff) << ' ' << hx(fn.power) << ' ' << hx(fn.log_power) << ' '
       << hx(fn.r_cap) << '\n';
  };
  fn_line("f", scene.pair.f);
  fn_line("g", scene.pair.g);
  os << "eta " << hx(constants.eta) << " depth " << options.max_depth << " stages "
     << options.max_sub_levels << '\n';
  os << "c " << hx(constants.c1) << ' ' << hx(constants.c2) << ' ' << hx(constants.c3) << ' '
     << hx(constants.d1) << ' ' << hx(constants.d2) << ' ' << hx(constants.epsilon_b0) << ' '
     << hx(constants.epsilon_b) << '\n';
  os << "b0 ";
  ball_line(b0);
  os << "r0 " << hx(r0) << '\n';
  os << "levels";
  for (std::size_t c : level_counts) os << ' ' << c;
  os << " |";
  for (double s : level_mu_sums) os << ' ' << hx(s);
  os << '\n';
  std::function<void(const CantorNode&)> emit = [&](const CantorNode& n) {
    os << "node " << n.level << ' ' << n.sub_level << ' ' << n.shell << ' ' << n.entry_index
       << ' ' << n.member_index << ' ' << hx(n.mu) << ' ';
    ball_line(n.ball);
    if (n.local) {
      const LocalLevel& loc = *n.local;
      os << "local " << hx(loc.formula_sub_levels) << ' ' << loc.allowed_sub_levels << ' '
         << loc.used_sub_levels << ' ' << hx(loc.sum_vk) << " cap:" << loc.cap_reason
         << " stages " << loc.stages.size() << " entries " << loc.entries.size() << " covers "
         << loc.b_primes.size() << '\n';
      for (const StageAudit& s : loc.stages) {
        os << "stage " << s.stage << ' ' << s.g_shell << ' ' << s.last_shell << ' '
           << hx(s.upsilon) << ' ' << hx(s.upsilon_tilde) << ' ' << hx(s.vk_sum) << ' '
           << hx(s.vk_floor) << ' ' << hx(s.measure_sum) << ' ' << hx(s.measure_target) << ' '
           << hx(s.f_ratio) << ' ' << hx(s.g_ratio) << ' ' << hx(s.epsilon_achieved) << ' '
           << hx(s.epsilon_target) << ' ' << hx(s.leftover_fraction) << ' '
           << hx(s.min_child_radius) << ' ' << hx(s.max_child_radius) << ' ' << s.ball_count
           << ' ' << s.bprime_count << ' ' << s.bprime_family_count << ' '
           << hx(s.bprime_family_measure) << '\n';
      }
      for (const KgbEntry& e : loc.entries) {
        os << "entry " << e.shell << ' ' << e.stage << ' ' << e.plane_index << ' '
           << e.bprime_index << ' ' << hx(e.vk) << " run " << e.pack.run.count << ' '
           << hx(e.pack.run.u_start) << ' ' << hx(e.pack.run.step_len) << ' '
           << hx(e.pack.run.radius) << ' ' << hx(e.pack.run.mu_each) << " start";
        for (Eigen::Index i = 0; i < e.pack.run.start.size(); ++i)
          os << ' ' << hx(e.pack.run.start(i));
        os << " step";
        for (Eigen::Index i = 0; i < e.pack.run.step.size(); ++i)
          os << ' ' << hx(e.pack.run.step(i));
        os << '\n';
      }
      for (const Ball& bp : loc.b_primes) {
        os << "cover ";
        ball_line(bp);
      }
    }
    os << "children " << n.children.size() << '\n';
    for (const CantorNode& ch : n.children) emit(ch);
  };
  emit(root);
  return os.str();
}

std::uint64_t CantorTree::hash() const { return fnv1a(serialize()); }

// ---------------------------------------------------------------------------
// Property re-checks
// ---------------------------------------------------------------------------

namespace {

struct PropAcc {
  PropertyReport rep;
  std::map<std::string, std::size_t> index;

  explicit PropAcc(std::initializer_list<const char*> names) {
    for (const char* n : names) {
      index[n] = rep.items.size();
      rep.items.push_back({n, true, 0, ""});
    }
  }
  void check(const std::string& name, bool ok, const std::string& detail) {
    PropertyReport::Item& it = rep.items[index.at(name)];
    it.checks += 1;
    if (!ok && it.pass) {
      it.pass = false;
      it.detail = detail;
    }
  }
};

}  // namespace

bool PropertyReport::all_pass() const {
  for (const Item& it : items) {
    if (!it.pass) return false;
  }
  return true;
}

std::string PropertyReport::summary() const {
  std::ostringstream os;
  for (const Item& it : items) {
    os << (it.pass ? "PASS" : "FAIL") << "  " << it.name << " (" << it.checks << " checks)";
    if (!it.pass) os << "  " << it.detail;
    os << '\n';
  }
  return os.str();
}

PropertyReport check_cantor_properties(const CantorTree& tree) {
  PropAcc acc{"root-level-exact",     "level-separation",     "stage-packing-separation",
              "stage-mass-floor",     "stage-scale-halving",  "stage-count-formula",
              "kept-ball-containment", "kept-ball-separation", "kept-collection-yield",
              "interior-cover-yield", "leftover-space-floor", "pack-centers-on-plane",
              "pack-ball-containment", "pack-separation",      "pack-measure-sandwich",
              "pack-cardinality-window", "mass-additivity",    "level-mass-sums"};
  const MtpScene& scene = tree.scene;
  const EngineConstants& cons = tree.constants;
  const int k = scene.k();
  const MeasureCtx ctx{k, unit_ball_volume(scene.norm, k)};
  const double rel = 1e-12;
  auto near_eq = [&](double a, double b) {
    return std::abs(a - b) <= rel * std::max({1.0, std::abs(a), std::abs(b)});
  };

  // root identity
  acc.check("root-level-exact",
            tree.root.level == 1 && tree.root.mu == 1.0 &&
                tree.root.ball.radius == tree.b0.radius &&
                tree.root.ball.center.size() == tree.b0.center.size() &&
                (tree.root.ball.center - tree.b0.center).cwiseAbs().maxCoeff() == 0.0,
            "the root node does not reproduce the root ball exactly");
  acc.check("root-level-exact",
            !tree.level_counts.empty() && tree.level_counts[0] == 1 &&
                tree.level_mu_sums[0] == 1.0,
            "level 1 bookkeeping is not exactly the root");

  std::vector<std::vector<const CantorNode*>> by_level;
  std::vector<std::size_t> counts(tree.level_counts.size(), 0);
  std::vector<double> sums(tree.level_mu_sums.size(), 0.0);
  double r0 = kInf;

  std::function<void(const CantorNode&)> walk = [&](const CantorNode& n) {
    if (static_cast<std::size_t>(n.level) > by_level.size())
      by_level.resize(static_cast<std::size_t>(n.level));
    by_level[static_cast<std::size_t>(n.level - 1)].push_back(&n);
    if (static_cast<std::size_t>(n.level - 1) < counts.size()) {
      counts[static_cast<std::size_t>(n.level - 1)] += 1;
      sums[static_cast<std::size_t>(n.level - 1)] += n.mu;
    }
    if (n.local && n.children.empty() && static_cast<std::size_t>(n.level) < counts.size()) {
      for (const KgbEntry& e : n.local->entries) {
        counts[static_cast<std::size_t>(n.level)] += static_cast<std::size_t>(e.pack.run.count);
        sums[static_cast<std::size_t>(n.level)] +=
            e.pack.run.mu_each * static_cast<double>(e.pack.run.count);
      }
    }

    if (!n.local) {
      for (const CantorNode& ch : n.children) walk(ch);
      return;
    }
    const LocalLevel& loc = *n.local;
    const Ball& B = n.ball;
    const bool is_root = n.level == 1;
    const double rB = B.radius;
    const double Vk = pow_int(rB, k);
    const double HB = ctx.vol(rB);
    if (n.level == 1) {
      for (const KgbEntry& e : loc.entries) r0 = std::min(r0, e.pack.run.radius);
    }

    // stage count formula
    const double formula =
        is_root ? std::floor(cons.c2 * cons.eta / (cons.c3 * HB)) + 1.0
                : std::floor(power_extend(scene.pair.f, rB) / (cons.c3 * Vk)) + 1.0;
    acc.check("stage-count-formula", near_eq(formula, loc.formula_sub_levels),
              "stored stage count formula " + fmt(loc.formula_sub_levels) +
                  " against recomputed " + fmt(formula));
    acc.check("stage-count-formula",
              loc.used_sub_levels == static_cast<int>(loc.stages.size()) &&
                  loc.used_sub_levels == loc.allowed_sub_levels &&
                  static_cast<double>(loc.allowed_sub_levels) <= formula &&
                  (is_root || formula >= 2.0) &&
                  (loc.cap_reason.empty() ==
                   (static_cast<double>(loc.allowed_sub_levels) == formula)),
              "stage count bookkeeping inconsistent at level " + std::to_string(n.level));

    // per-stage audits
    double min_f1 = kInf;
    double min_g1 = kInf;
    double dmin = kInf;
    for (const KgbEntry& e : loc.entries) {
      if (e.stage != 1) continue;
      min_f1 = std::min(min_f1, power_extend(scene.pair.f, e.a.radius));
      min_g1 = std::min(min_g1, power_extend(scene.pair.g, e.a.radius));
      dmin = std::min(dmin, e.a.radius);
    }
    for (const StageAudit& s : loc.stages) {
      double vk_sum = 0.0;
      double measure = 0.0;
      std::size_t nballs = 0;
      for (const KgbEntry& e : loc.entries) {
        if (e.stage != s.stage) continue;
        vk_sum += pow_int(e.a.radius, k);
        measure += ctx.vol(e.a.radius);
        nballs += 1;
      }
      acc.check("stage-mass-floor",
                near_eq(s.vk_floor, cons.c3 * Vk) && near_eq(vk_sum, s.vk_sum) &&
                    vk_sum >= s.vk_floor * (1.0 - 1e-9) && nballs == s.ball_count,
                "stage " + std::to_string(s.stage) + " at level " + std::to_string(n.level) +
                    ": mass weight " + fmt(vk_sum) + " against floor " + fmt(s.vk_floor));
      if (s.stage == 1) {
        acc.check("kept-collection-yield",
                  near_eq(s.measure_target, HB / (4.0 * pow_int(15.0, k))) &&
                      near_eq(measure, s.measure_sum) && measure >= s.measure_target,
                  "stage 1 at level " + std::to_string(n.level) + ": measure " + fmt(measure) +
                      " against target " + fmt(s.measure_target));
      } else {
        const double fr = power_extend(scene.pair.f, s.upsilon) / min_f1;
        const double gr = power_extend(scene.pair.g, s.upsilon) / min_g1;
        acc.check("stage-scale-halving",
                  near_eq(fr, s.f_ratio) && near_eq(gr, s.g_ratio) && fr <= 0.5 * (1.0 + rel) &&
                      gr <= 0.5 * (1.0 + rel),
                  "stage 2 at level " + std::to_string(n.level) + ": halving ratios " + fmt(fr) +
                      ", " + fmt(gr));
        // surviving space and interior cover, recomputed from stage 1
        std::vector<Ball> kept1;
        for (const KgbEntry& e : loc.entries) {
          if (e.stage == 1) kept1.push_back(e.a);
        }
        const double Hhalf = ctx.vol(rB / 2.0);
        const double lo_lb = leftover_lower_bound(ctx, scene.norm, B, kept1);
        acc.check("leftover-space-floor",
                  near_eq(lo_lb / Hhalf, s.leftover_fraction) &&
                      lo_lb >= 0.5 * Hhalf * (1.0 - 1e-9),
                  "level " + std::to_string(n.level) + ": surviving space bound " + fmt(lo_lb) +
                      " against half of " + fmt(Hhalf));
        const double rp = dmin / 2.0;
        const BPrimeFamily fam = interior_cover_family(ctx, scene.norm, B, kept1, rp);
        const double fam_floor = cons.c1 / (2.0 * cons.c2 * pow_int(5.0, k)) * Hhalf;
        bool fam_ok = fam.centers.size() == s.bprime_family_count &&
                      near_eq(fam.measure, s.bprime_family_measure) &&
                      fam.measure >= fam_floor * (1.0 - 1e-9) &&
                      loc.b_primes.size() == s.bprime_count &&
                      loc.b_primes.size() <= fam.centers.size();
        for (std::size_t bi = 0; fam_ok && bi < loc.b_primes.size(); ++bi) {
          fam_ok = loc.b_primes[bi].radius == rp &&
                   (loc.b_primes[bi].center - fam.centers[bi]).cwiseAbs().maxCoeff() == 0.0;
        }
        acc.check("interior-cover-yield", fam_ok,
                  "level " + std::to_string(n.level) + ": interior cover " +
                      std::to_string(fam.centers.size()) + " balls, measure " +
                      fmt(fam.measure) + " against floor " + fmt(fam_floor));
      }
    }

    // entries: containment, packs, masses
    double mass_sum = 0.0;
    for (std::size_t ei = 0; ei < loc.entries.size(); ++ei) {
      const KgbEntry& e = loc.entries[ei];
      bool contained = ball_contains(B, e.a.scaled(3.0), scene.norm);
      if (e.stage >= 2) {
        contained = contained && e.bprime_index < loc.b_primes.size() &&
                    ball_contains(loc.b_primes[e.bprime_index], e.a.scaled(3.0), scene.norm);
      }
      acc.check("kept-ball-containment", contained,
                "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                    ": the 3-scaled kept ball leaves its host");
      // re-run the packing and compare the stored run
      try {
        const PackingResult pr = build_packing(scene, cons, e.plane, e.a, e.shell);
        acc.check("pack-separation",
                  pr.run.count == e.pack.run.count && pr.run.u_start == e.pack.run.u_start &&
                      pr.run.step_len == e.pack.run.step_len &&
                      pr.run.radius == e.pack.run.radius &&
                      (e.pack.run.count < 2 || e.pack.run.step_len > e.pack.separation),
                  "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                      ": stored run differs from the rebuilt packing");
        acc.check("pack-measure-sandwich",
                  near_eq(pr.union_measure, e.pack.union_measure) &&
                      near_eq(pr.lower_bound, e.pack.lower_bound) &&
                      near_eq(pr.upper_bound, e.pack.upper_bound) &&
                      e.pack.lower_bound <= e.pack.union_measure * (1.0 + rel) &&
                      e.pack.union_measure <= e.pack.upper_bound * (1.0 + rel),
                  "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                      ": measure sandwich " + fmt(e.pack.lower_bound) + " <= " +
                      fmt(e.pack.union_measure) + " <= " + fmt(e.pack.upper_bound));
        acc.check("pack-cardinality-window",
                  near_eq(pr.cardinality_ratio, e.pack.cardinality_ratio) &&
                      e.pack.cardinality_ratio >= cons.d1 * (1.0 - rel) &&
                      e.pack.cardinality_ratio <= cons.d2 * (1.0 + rel),
                  "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                      ": count ratio " + fmt(e.pack.cardinality_ratio));
      } catch (const property_error& pe) {
        acc.check(pe.property(), false, pe.what());
      }
      // centres on the plane and members inside the half ball
      const RunPack& run = e.pack.run;
      const double umax =
          std::max(std::abs(run.u_start),
                   std::abs(run.u_start + static_cast<double>(run.count - 1) * run.step_len));
      acc.check("pack-ball-containment",
                umax <= e.a.radius / 2.0 * (1.0 + rel) &&
                    umax + 3.0 * run.radius <= e.a.radius * (1.0 + rel),
                "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                    ": run reach " + fmt(umax) + " against r(A) = " + fmt(e.a.radius));
      const bool sound =
          run.count < 2 || run.step_len >= 1e4 * std::numeric_limits<double>::epsilon() *
                                               (1.0 + run.start.norm());
      if (sound) {
        bool on_plane = true;
        bool inside = true;
        for (std::int64_t mi : {std::int64_t{0}, run.count / 2, run.count - 1}) {
          const Ball mb = run.member(std::min(mi, run.count - 1));
          on_plane = on_plane && e.plane.euclid_dist(mb.center) <= 1e-9 * (1.0 + mb.center.norm());
          inside = inside && ball_contains(e.a, mb.scaled(3.0), scene.norm, 1e-9 * e.a.radius);
        }
        acc.check("pack-centers-on-plane", on_plane,
                  "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                      ": a member centre is off its plane");
        acc.check("pack-ball-containment", inside,
                  "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                      ": a sampled 3-scaled member leaves the kept ball");
      } else {
        // collapsed scale: the scalar run bookkeeping (compared above against
        // the rebuilt packing) carries the geometric checks
        acc.check("pack-centers-on-plane", true, "");
      }
      const double want_mu = n.mu * (e.vk / loc.sum_vk) / static_cast<double>(run.count);
      acc.check("mass-additivity", near_eq(want_mu, run.mu_each),
                "entry " + std::to_string(ei) + " at level " + std::to_string(n.level) +
                    ": member mass " + fmt(run.mu_each) + " against " + fmt(want_mu));
      mass_sum += run.mu_each * static_cast<double>(run.count);
    }
    acc.check("mass-additivity", std::abs(mass_sum - n.mu) <= 1e-9 * std::max(1.0, n.mu),
              "level " + std::to_string(n.level) + ": children masses sum to " + fmt(mass_sum) +
                  " against mu(B) = " + fmt(n.mu));

    // kept-ball separation and the packing separation chain across entries
    for (std::size_t i = 0; i < loc.entries.size(); ++i) {
      for (std::size_t j = i + 1; j < loc.entries.size(); ++j) {
        const KgbEntry& ea = loc.entries[i];
        const KgbEntry& eb = loc.entries[j];
        const double dist = scene.norm(ea.a.center - eb.a.center);
        acc.check("kept-ball-separation", dist > 3.0 * (ea.a.radius + eb.a.radius),
                  "entries " + std::to_string(i) + ", " + std::to_string(j) + " at level " +
                      std::to_string(n.level) + " are not 3-separated");
        // members sit within half balls, so this margin separates any two
        // members of distinct entries by more than 3 member diameters
        acc.check("stage-packing-separation",
                  dist - 0.5 * (ea.a.radius + eb.a.radius) >
                      3.0 * (ea.pack.run.radius + eb.pack.run.radius),
                  "entries " + std::to_string(i) + ", " + std::to_string(j) + " at level " +
                      std::to_string(n.level) + ": member separation chain fails");
      }
      // within one entry the run spacing is the separation
      const RunPack& run = loc.entries[i].pack.run;
      acc.check("stage-packing-separation",
                run.count < 2 || run.step_len > 6.0 * run.radius,
                "entry " + std::to_string(i) + " at level " + std::to_string(n.level) +
                    ": run spacing " + fmt(run.step_len));
    }

    // children mirror the runs exactly
    for (const CantorNode& ch : n.children) {
      const KgbEntry& e = loc.entries[ch.entry_index];
      const Ball want = e.pack.run.member(ch.member_index);
      acc.check("mass-additivity",
                ch.mu == e.pack.run.mu_each && ch.ball.radius == want.radius &&
                    (ch.ball.center - want.center).cwiseAbs().maxCoeff() == 0.0 &&
                    ch.sub_level == e.stage && ch.shell == e.shell,
                "a realized child does not mirror its run member");
    }

    for (const CantorNode& ch : n.children) walk(ch);
  };
  walk(tree.root);

  // realized same-level nodes: 3-scaled balls pairwise disjoint
  for (std::size_t lv = 1; lv < by_level.size(); ++lv) {
    const std::vector<const CantorNode*>& nodes = by_level[lv];
    for (std::size_t i = 0; i < nodes.size(); ++i) {
      for (std::size_t j = i + 1; j < nodes.size(); ++j) {
        acc.check("level-separation",
                  balls_disjoint(nodes[i]->ball.scaled(3.0), nodes[j]->ball.scaled(3.0),
                                 scene.norm),
                  "two level " + std::to_string(lv + 1) +
                      " balls have meeting 3-scaled copies");
      }
    }
  }
  // deepest level: sampled member pairs across entries where coordinates
  // still resolve, scalar margins otherwise (counted above)
  for (const std::vector<const CantorNode*>& nodes : by_level) {
    for (const CantorNode* n : nodes) {
      if (!n->local || !n->children.empty()) continue;
      const LocalLevel& loc = *n->local;
      for (std::size_t i = 0; i < loc.entries.size(); ++i) {
        for (std::size_t j = i + 1; j < loc.entries.size(); ++j) {
          const RunPack& ra = loc.entries[i].pack.run;
          const RunPack& rb = loc.entries[j].pack.run;
          const double eps = std::numeric_limits<double>::epsilon();
          const bool sound_a = ra.count < 2 || ra.step_len >= 1e4 * eps * (1.0 + ra.start.norm());
          const bool sound_b = rb.count < 2 || rb.step_len >= 1e4 * eps * (1.0 + rb.start.norm());
          if (!sound_a || !sound_b) continue;
          for (std::int64_t mi : {std::int64_t{0}, ra.count / 2, ra.count - 1}) {
            for (std::int64_t mj : {std::int64_t{0}, rb.count / 2, rb.count - 1}) {
              const Ball ba = ra.member(mi);
              const Ball bb = rb.member(mj);
              acc.check("level-separation",
                        balls_disjoint(ba.scaled(3.0), bb.scaled(3.0), scene.norm),
                        "two terminal members of distinct kept balls meet when 3-scaled");
            }
          }
        }
      }
    }
  }

  // level bookkeeping
  bool counts_ok = counts == tree.level_counts;
  bool sums_ok = sums.size() == tree.level_mu_sums.size();
  for (std::size_t i = 0; sums_ok && i < sums.size(); ++i) {
    sums_ok = near_eq(sums[i], tree.level_mu_sums[i]) && std::abs(sums[i] - 1.0) <= 1e-9;
  }
  acc.check("level-mass-sums", counts_ok && sums_ok,
            "level counts or mass sums do not match the stored bookkeeping");
  acc.check("root-level-exact", !std::isfinite(r0) ? tree.r0 == 0.0 || tree.r0 == r0
                                                   : tree.r0 == r0,
            "the stored finest level 2 radius does not match the tree");
  return acc.rep;
}

// ---------------------------------------------------------------------------
// Tree measure of a ball
// ---------------------------------------------------------------------------

double mu_of_set(const CantorTree& tree, const Ball& d) {
  if (tree.options.max_depth < 2)
    throw config_error("tree measure: needs a tree of depth >= 2");
  if (d.center.size() != tree.scene.k())
    throw config_error("tree measure: ball dimension mismatch");
  if (!(d.radius >= 0.0) || !std::isfinite(d.radius))
    throw config_error("tree measure: radius must be finite and non-negative");
  double sum = 0.0;
  std::function<void(const CantorNode&)> walk = [&](const CantorNode& n) {
    if (n.local && n.children.empty()) {
      for (const KgbEntry& e : n.local->entries) {
        const RunPack& run = e.pack.run;
        if (run.empty || run.count < 1) continue;
        const double Y = run.radius;
        if (e.plane.l == 0) {
          if (tree.scene.norm(d.center - run.start) <= d.radius + Y) sum += run.mu_each;
          continue;
        }
        const double td = e.plane.normals.row(0).dot(d.center) - e.plane.offsets(0);
        const double ud = e.plane.tangent.col(0).dot(d.center - e.plane.base);
        const double w2 = sq(d.radius + Y) - sq(td);
        if (!(w2 >= 0.0)) continue;
        const double W = std::sqrt(w2);
        auto inside = [&](double i) {
          const double du = run.u_start + i * run.step_len - ud;
          return sq(du) + sq(td) <= sq(d.radius + Y);
        };
        double lo = std::ceil((ud - W - run.u_start) / run.step_len);
        double hi = std::floor((ud + W - run.u_start) / run.step_len);
        for (int it = 0; it < 4 && inside(lo - 1.0); ++it) lo -= 1.0;
        for (int it = 0; it < 4 && lo <= hi && !inside(lo); ++it) lo += 1.0;
        for (int it = 0; it < 4 && inside(hi + 1.0); ++it) hi += 1.0;
        for (int it = 0; it < 4 && hi >= lo && !inside(hi); ++it) hi -= 1.0;
        lo = std::max(lo, 0.0);
        hi = std::min(hi, static_cast<double>(run.count - 1));
        if (hi >= lo && inside(lo) && inside(hi)) sum += (hi - lo + 1.0) * run.mu_each;
      }
    }
    for (const CantorNode& ch : n.children) walk(ch);
  };
  walk(tree.root);
  return sum;
}

// ---------------------------------------------------------------------------
// Measure bound sampling
// ---------------------------------------------------------------------------

MeasureBoundReport verify_cantor_measure_bound(const CantorTree& tree, std::size_t samples,
                                               std::uint64_t seed) {
  if (tree.options.max_depth < 2)
    throw config_error("measure bound: needs a tree of depth >= 2");
  if (samples == 0) throw config_error("measure bound: need at least one sample");
  MeasureBoundReport rep;
  rep.samples = samples;
  rep.r0 = tree.r0;
  const MtpScene& scene = tree.scene;
  const double eta = tree.constants.eta;

  struct RunRef {
    const KgbEntry* entry;
  };
  std::vector<RunRef> runs;
  std::function<void(const CantorNode&)> walk = [&](const CantorNode& n) {
    if (n.level >= 2) {
      rep.max_node_ratio =
          std::max(rep.max_node_ratio, n.mu * eta / scene.pair.f.eval_extended(n.ball.radius));
    }
    if (n.local && n.children.empty()) {
      for (const KgbEntry& e : n.local->entries) {
        if (e.pack.run.count < 1) continue;
        runs.push_back({&e});
        rep.max_node_ratio =
            std::max(rep.max_node_ratio,
                     e.pack.run.mu_each * eta / scene.pair.f.eval_extended(e.pack.run.radius));
      }
    }
    for (const CantorNode& ch : n.children) walk(ch);
  };
  walk(tree.root);
  if (runs.empty()) throw config_error("measure bound: the tree has no terminal runs");

  const double r_hi = tree.r0;
  const double r_lo = tree.r0 / 100.0;
  if (!(r_lo > 0.0)) throw config_error("measure bound: the tree has no finest radius");
  const CounterRng amb(seed, 0x616d6269656e74ULL);
  const CounterRng sup(seed, 0x737570706f7274ULL);
  const int k = scene.k();
  const std::size_t half = samples / 2;
  for (std::size_t s = 0; s < samples; ++s) {
    const std::uint64_t base = s * 256;
    Vec c(k);
    double radius = 0.0;
    if (s < half) {
      radius = r_lo * std::exp(std::log(r_hi / r_lo) * amb.uniform(base));
      std::uint64_t ctr = base + 1;
      for (int tries = 0;; ++tries) {
        for (int dd = 0; dd < k; ++dd)
          c(dd) = tree.b0.center(dd) + amb.uniform(ctr++, -tree.b0.radius, tree.b0.radius);
        if (scene.norm(c - tree.b0.center) <= tree.b0.radius) break;
        if (tries > 100) {
          c = tree.b0.center;
          break;
        }
      }
    } else {
      radius = r_lo * std::exp(std::log(r_hi / r_lo) * sup.uniform(base));
      const RunRef rr = runs[sup.index(base + 1, runs.size())];
      const RunPack& run = rr.entry->pack.run;
      const auto mi = static_cast<std::int64_t>(
          sup.index(base + 2, static_cast<std::uint64_t>(run.count)));
      const Ball member = run.member(mi);
      for (int dd = 0; dd < k; ++dd)
        c(dd) = member.center(dd) + sup.uniform(base + 3 + static_cast<std::uint64_t>(dd),
                                                -radius / 2.0, radius / 2.0);
    }
    const double mass = mu_of_set(tree, Ball(c, radius));
    if (mass > 0.0) {
      rep.nonzero_samples += 1;
      rep.max_sample_ratio =
          std::max(rep.max_sample_ratio, mass * eta / scene.pair.f.eval_extended(radius));
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// Coverage scan and the separation predicate
// ---------------------------------------------------------------------------

std::vector<CoverageRow> check_full_measure(const MtpScene& scene, const Ball& b, int g_lo,
                                            int g_hi, int span, int grid_per_axis) {
  const int k = scene.k();
  if (k != 1 && k != 2) throw config_error("coverage scan: ambient dimension must be 1 or 2");
  if (b.center.size() != k) throw config_error("coverage scan: ball dimension mismatch");
  if (g_lo < 1 || g_hi < g_lo || g_hi > scene.source->max_shell())
    throw config_error("coverage scan: shell range out of bounds");
  if (span < 0) throw config_error("coverage scan: span must be non-negative");
  if (grid_per_axis < 2) throw config_error("coverage scan: need at least 2 grid points");

  std::vector<Vec> pts;
  const double step = 2.0 * b.radius / (grid_per_axis - 1);
  if (k == 1) {
    pts.reserve(static_cast<std::size_t>(grid_per_axis));
    for (int i = 0; i < grid_per_axis; ++i) {
      Vec p(1);
      p(0) = b.center(0) - b.radius + step * i;
      pts.push_back(std::move(p));
    }
  } else {
    for (int i = 0; i < grid_per_axis; ++i) {
      for (int j = 0; j < grid_per_axis; ++j) {
        Vec p(2);
        p(0) = b.center(0) - b.radius + step * i;
        p(1) = b.center(1) - b.radius + step * j;
        if (scene.norm(p - b.center) <= b.radius) pts.push_back(std::move(p));
      }
    }
  }
  if (pts.empty()) throw config_error("coverage scan: the grid missed the ball");

  std::vector<CoverageRow> rows;
  rows.reserve(static_cast<std::size_t>(g_hi - g_lo + 1));
  for (int g = g_lo; g <= g_hi; ++g) {
    std::size_t hit = 0;
    for (const Vec& p : pts) {
      bool ok = false;
      const int j_hi = std::min(g + span, scene.source->max_shell());
      for (int j = g; j <= j_hi && !ok; ++j) {
        const double ut = scene.upsilon_tilde(j);
        if (!std::isfinite(ut)) continue;
        for (const AffinePlane& pl : scene.source->planes_near(j, Ball(p, ut * (1.0 + 1e-9)))) {
          if (pl.euclid_dist(p) <= ut) {
            ok = true;
            break;
          }
        }
      }
      if (ok) ++hit;
    }
    rows.push_back({g, static_cast<double>(hit) / static_cast<double>(pts.size())});
  }
  return rows;
}

SeparationCheck check_ball_separation(const Ball& a, const Ball& m, double c,
                                      const NormSpec& norm) {
  if (a.center.size() != m.center.size())
    throw config_error("separation check: dimension mismatch");
  if (!(a.radius > 0.0) || !(m.radius > 0.0))
    throw config_error("separation check: radii must be positive");
  SeparationCheck out;
  const double dist = norm(a.center - m.center);
  const bool meet = dist <= a.radius + m.radius;
  const bool not_swallowed = dist + a.radius > c * m.radius;
  out.hypotheses = c >= 3.0 && meet && not_swallowed;
  if (!out.hypotheses) return out;
  out.radius_ok = m.radius <= a.radius * (1.0 + kGeomTol);
  out.containment_ok = dist + c * m.radius <= 5.0 * a.radius * (1.0 + kGeomTol);
  return out;
}

}  // namespace linforms
