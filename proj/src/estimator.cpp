// linforms — estimator implementation.
// SPDX-License-Identifier: MIT
#include "linforms/estimator.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <thread>

#include "linforms/rng.hpp"

namespace linforms {

// ---------------------------------------------------------------------------
// Dimension prediction
// ---------------------------------------------------------------------------

double predict_dimension(int n, int m, double tau) {
  if (n < 1 || m < 1) throw config_error("dimension prediction: n and m must be >= 1");
  if (!std::isfinite(tau)) throw config_error("dimension prediction: tau must be finite");
  const double saturation = static_cast<double>(n) / m;
  if (tau <= saturation) return static_cast<double>(n) * m;
  return static_cast<double>(m) * (n - 1) + (m + n) / (tau + 1.0);
}

// ---------------------------------------------------------------------------
// Monte-Carlo measure
// ---------------------------------------------------------------------------

namespace {

inline double dist_to_integer(double t) { return std::fabs(t - std::nearbyint(t)); }

/// Witness scan for the hot loop: identity or zero Phi, n <= 3, raw arrays.
/// Returns true when some q with G <= |q|_sup <= Q has an integer p with
/// |q·X + p·Phi - y|_sup < psi(|q|_sup).
class WitnessScanner {
 public:
  WitnessScanner(const SceneConfig& scene, int G, int Q)
      : scene_(scene), G_(G), Q_(Q) {
    identity_phi_ = scene.Phi.isIdentity(1e-15);
    zero_phi_ = !identity_phi_ && scene.Phi.isZero(0.0);
    fast_ = (identity_phi_ || zero_phi_) && scene.n <= 3;
    psi_by_shell_.resize(Q + 1, 0.0);
    for (int s = std::max(1, G); s <= Q; ++s) psi_by_shell_[s] = scene.psi(s);
  }

  bool scan(const double* x) const {
    if (!fast_) {
      Vec xv = Eigen::Map<const Vec>(x, static_cast<Eigen::Index>(scene_.n) * scene_.m);
      return has_witness(scene_, xv, Q_, G_);
    }
    for (int s = G_; s <= Q_; ++s) {
      if (!(psi_by_shell_[s] > 0.0)) continue;
      if (scan_shell(x, s, psi_by_shell_[s])) return true;
    }
    return false;
  }

 private:
  bool check_q(const double* x, const int* q, double eps) const {
    const int n = scene_.n, m = scene_.m;
    if (scene_.partition) {
      Eigen::VectorXi qv(n);
      for (int i = 0; i < n; ++i) qv(i) = q[i];
      if (!is_primitive(qv, *scene_.partition)) return false;
    }
    for (int l = 0; l < m; ++l) {
      double dot = -scene_.y(l);
      for (int i = 0; i < n; ++i) dot += q[i] * x[l * n + i];
      const double err = identity_phi_ ? dist_to_integer(dot) : std::fabs(dot);
      if (err >= eps) return false;
    }
    return true;
  }

  /// Walks the sup-norm shell |q|_sup == s.
  bool scan_shell(const double* x, int s, double eps) const {
    const int n = scene_.n;
    int q[3] = {0, 0, 0};
    if (n == 1) {
      q[0] = s;
      if (check_q(x, q, eps)) return true;
      q[0] = -s;
      return check_q(x, q, eps);
    }
    if (n == 2) {
      for (int a = -s; a <= s; ++a) {
        q[0] = a;
        q[1] = s;
        if (check_q(x, q, eps)) return true;
        q[1] = -s;
        if (check_q(x, q, eps)) return true;
      }
      for (int b = -(s - 1); b <= s - 1; ++b) {
        q[0] = s;
        q[1] = b;
        if (check_q(x, q, eps)) return true;
        q[0] = -s;
        if (check_q(x, q, eps)) return true;
      }
      return false;
    }
    // n == 3: faces of the sup-norm cube.
    for (int a = -s; a <= s; ++a) {
      for (int b = -s; b <= s; ++b) {
        for (int face = 0; face < 3; ++face) {
          for (int sign = -1; sign <= 1; sign += 2) {
            // skip interior duplicates: the fixed coordinate is the first
            // attaining the sup
            q[face] = sign * s;
            q[(face + 1) % 3] = a;
            q[(face + 2) % 3] = b;
            if (std::abs(q[0]) > s || std::abs(q[1]) > s || std::abs(q[2]) > s) continue;
            bool canonical = true;
            for (int i = 0; i < face; ++i) {
              if (std::abs(q[i]) == s) {
                canonical = false;
                break;
              }
            }
            if (!canonical) continue;
            if (check_q(x, q, eps)) return true;
          }
        }
      }
    }
    return false;
  }

  const SceneConfig& scene_;
  int G_, Q_;
  bool identity_phi_ = false, zero_phi_ = false, fast_ = false;
  std::vector<double> psi_by_shell_;
};

}  // namespace

McResult mc_measure(const SceneConfig& scene, int G, int Q, std::int64_t samples,
                    std::uint64_t seed, int threads) {
  if (G < 1 || Q < G) throw config_error("mc measure: need 1 <= G <= Q");
  if (samples < 1) throw config_error("mc measure: need at least one sample");
  threads = std::max(1, threads);

  const int dims = scene.n * scene.m;
  const WitnessScanner scanner(scene, G, Q);

  auto count_range = [&](std::int64_t lo, std::int64_t hi) {
    std::int64_t hits = 0;
    std::vector<double> x(dims);
    for (std::int64_t i = lo; i < hi; ++i) {
      CounterRng rng(seed, static_cast<std::uint64_t>(i));
      for (int d = 0; d < dims; ++d) x[d] = rng.uniform(d);
      if (scanner.scan(x.data())) ++hits;
    }
    return hits;
  };

  std::int64_t hits = 0;
  if (threads == 1) {
    hits = count_range(0, samples);
  } else {
    std::vector<std::int64_t> partial(threads, 0);
    std::vector<std::thread> pool;
    const std::int64_t chunk = (samples + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
      const std::int64_t lo = t * chunk, hi = std::min<std::int64_t>(samples, lo + chunk);
      if (lo >= hi) break;
      pool.emplace_back([&, t, lo, hi] { partial[t] = count_range(lo, hi); });
    }
    for (auto& th : pool) th.join();
    for (std::int64_t p : partial) hits += p;
  }

  McResult r;
  r.samples = samples;
  r.hits = hits;
  r.fraction = static_cast<double>(hits) / static_cast<double>(samples);
  r.ci_half_width = 1.96 * std::sqrt(r.fraction * (1.0 - r.fraction) / static_cast<double>(samples));
  return r;
}

double mc_tail_bound(const SceneConfig& scene, int G, int Q) {
  if (G < 1 || Q < G) throw config_error("tail bound: need 1 <= G <= Q");
  double total = 0.0;
  for (int s = G; s <= Q; ++s) {
    const double shell =
        std::pow(2.0 * s + 1.0, scene.n) - std::pow(2.0 * s - 1.0, scene.n);
    const double v = std::min(scene.psi(s), 1.0);
    total += shell * std::min(1.0, std::pow(2.0 * v, scene.m));
  }
  return total;
}

// ---------------------------------------------------------------------------
// Box counting
// ---------------------------------------------------------------------------

namespace {

std::int64_t grid_size(double delta) {
  const double d = 1.0 / delta;
  const double r = std::nearbyint(d);
  return static_cast<std::int64_t>(std::fabs(d - r) < 1e-6 ? r : std::ceil(d));
}

/// nm = 1: exact merged-interval cell count.
std::int64_t count_boxes_1d(const SceneConfig& scene, int Q, double delta, BoxWidthMode mode) {
  const double y = scene.y(0);
  const double phi_scale = scene.Phi(0, 0);  // p enters as p*Phi
  const std::int64_t D = grid_size(delta);
  const double wQ = std::min(scene.psi(Q), 1.0);

  std::vector<std::pair<std::int64_t, std::int64_t>> cells;
  for (int q = 1; q <= Q; ++q) {
    // q and -q describe the same set (p flips sign); scan q > 0 only.
    if (scene.partition) {
      Eigen::VectorXi qv(1);
      qv(0) = q;
      if (!is_primitive(qv, *scene.partition)) continue;
    }
    const double w = mode == BoxWidthMode::TruncationWidth ? wQ : std::min(scene.psi(q), 1.0);
    if (!(w > 0.0)) continue;
    if (phi_scale == 0.0) {
      // numerators cannot act: a single strip around x = y/q
      const double a = std::max(0.0, (y - w) / q), b = std::min(1.0, (y + w) / q);
      if (b > a) cells.emplace_back(static_cast<std::int64_t>(std::floor(a / delta)),
                                    std::min<std::int64_t>(D - 1, static_cast<std::int64_t>(std::floor(b / delta))));
      continue;
    }
    // |q x + p*phi - y| < w  =>  x in ((y - p*phi - w)/q, (y - p*phi + w)/q)
    const long long p_lo = static_cast<long long>(std::floor((y - q - w) / std::fabs(phi_scale))) - 1;
    const long long p_hi = static_cast<long long>(std::ceil((y + w) / std::fabs(phi_scale))) + 1;
    for (long long p = p_lo; p <= p_hi; ++p) {
      const double c = y - p * phi_scale;
      const double a = std::max(0.0, (c - w) / q), b = std::min(1.0, (c + w) / q);
      if (b <= a) continue;
      const auto ia = static_cast<std::int64_t>(std::floor(a / delta));
      const auto ib = std::min<std::int64_t>(D - 1, static_cast<std::int64_t>(std::floor(b / delta)));
      if (ib >= ia) cells.emplace_back(ia, ib);
    }
  }
  std::sort(cells.begin(), cells.end());
  std::int64_t count = 0, right = -1;
  for (const auto& [a, b] : cells) {
    if (a > right) {
      count += b - a + 1;
      right = b;
    } else if (b > right) {
      count += b - right;
      right = b;
    }
  }
  return count;
}

/// Column-major bitmap over the D x D cell grid.
class Bitmap2D {
 public:
  explicit Bitmap2D(std::int64_t D) : D_(D), words_per_col_((D + 63) / 64), bits_(D_ * words_per_col_, 0) {}

  void mark_rows(std::int64_t col, std::int64_t j_lo, std::int64_t j_hi) {
    j_lo = std::max<std::int64_t>(0, j_lo);
    j_hi = std::min<std::int64_t>(D_ - 1, j_hi);
    if (j_hi < j_lo) return;
    std::uint64_t* w = bits_.data() + col * words_per_col_;
    const std::int64_t w_lo = j_lo >> 6, w_hi = j_hi >> 6;
    const std::uint64_t first = ~0ULL << (j_lo & 63);
    const std::uint64_t last = ~0ULL >> (63 - (j_hi & 63));
    if (w_lo == w_hi) {
      w[w_lo] |= first & last;
      return;
    }
    w[w_lo] |= first;
    for (std::int64_t i = w_lo + 1; i < w_hi; ++i) w[i] = ~0ULL;
    w[w_hi] |= last;
  }

  std::int64_t popcount() const {
    std::int64_t total = 0;
    // mask tail bits beyond D in each column
    const int tail_bits = static_cast<int>(D_ & 63);
    const std::uint64_t tail_mask = tail_bits == 0 ? ~0ULL : (~0ULL >> (64 - tail_bits));
    for (std::int64_t c = 0; c < D_; ++c) {
      const std::uint64_t* w = bits_.data() + c * words_per_col_;
      for (std::int64_t i = 0; i < words_per_col_; ++i) {
        std::uint64_t v = w[i];
        if (i == words_per_col_ - 1) v &= tail_mask;
        total += std::popcount(v);
      }
    }
    return total;
  }

 private:
  std::int64_t D_, words_per_col_;
  std::vector<std::uint64_t> bits_;
};

/// nm = 2, n = 2, m = 1: conservative cell-overlap rasterization.
std::int64_t count_boxes_2x1(const SceneConfig& scene, int Q, double delta, BoxWidthMode mode) {
  const std::int64_t D = grid_size(delta);
  if (D > 70000) throw config_error("box count: delta too small for the 2-d bitmap");
  Bitmap2D bitmap(D);
  const double y = scene.y(0);
  const double phi_scale = scene.Phi(0, 0);
  const double wQ = std::min(scene.psi(Q), 1.0);

  for (int q1 = -Q; q1 <= Q; ++q1) {
    for (int q2 = -Q; q2 <= Q; ++q2) {
      if (q1 == 0 && q2 == 0) continue;
      // (q, p) and (-q, -p) give the same strip: keep lexicographically
      // positive representatives.
      if (q1 < 0 || (q1 == 0 && q2 < 0)) continue;
      if (std::max(std::abs(q1), std::abs(q2)) > Q) continue;
      if (scene.partition) {
        Eigen::VectorXi qv(2);
        qv << q1, q2;
        if (!is_primitive(qv, *scene.partition)) continue;
      }
      const int qs = std::max(std::abs(q1), std::abs(q2));
      const double w = mode == BoxWidthMode::TruncationWidth ? wQ : std::min(scene.psi(qs), 1.0);
      if (!(w > 0.0)) continue;

      for (std::int64_t i = 0; i < D; ++i) {
        const double x1_lo = i * delta, x1_hi = (i + 1) * delta;
        const double a_lo = (q1 >= 0 ? q1 * x1_lo : q1 * x1_hi) - y;
        const double a_hi = (q1 >= 0 ? q1 * x1_hi : q1 * x1_lo) - y;
        // v(x) = q1 x1 + q2 x2 - y; with p*phi acting at integer multiples c
        // of phi_scale, the cell meets a strip iff some admissible c lies in
        // (v_min - w, v_max + w).
        if (q2 == 0) {
          bool hit;
          if (phi_scale == 0.0) {
            hit = (a_lo - w < 0.0) && (a_hi + w > 0.0);
          } else {
            const double lo = (a_lo - w) / std::fabs(phi_scale), hi = (a_hi + w) / std::fabs(phi_scale);
            hit = std::floor(hi - 1e-12) >= std::ceil(lo + 1e-12) || std::floor(hi) > lo;
          }
          if (hit) bitmap.mark_rows(i, 0, D - 1);
          continue;
        }
        const double step = q2 * delta;
        auto mark_for_center = [&](double c) {
          // j-range with (v_min - w, v_max + w) ∋ c
          double lo, hi;
          if (q2 > 0) {
            lo = (c - w - a_hi) / step - 1.0;
            hi = (c + w - a_lo) / step;
          } else {
            lo = (c + w - a_lo) / step - 1.0;
            hi = (c - w - a_hi) / step;
          }
          const auto j_lo = static_cast<std::int64_t>(std::ceil(lo + 1e-12));
          const auto j_hi = static_cast<std::int64_t>(std::floor(hi - 1e-12));
          bitmap.mark_rows(i, j_lo, j_hi);
        };
        if (phi_scale == 0.0) {
          mark_for_center(0.0);
        } else {
          // admissible centers: integer multiples of |phi_scale| covering the
          // column's value range
          const double v_min = std::min(a_lo + std::min(0.0, step * D), a_lo);
          const double v_max = std::max(a_hi + std::max(0.0, step * D), a_hi);
          const double scale = std::fabs(phi_scale);
          const auto c_lo = static_cast<long long>(std::floor((v_min - w) / scale)) - 1;
          const auto c_hi = static_cast<long long>(std::ceil((v_max + w) / scale)) + 1;
          for (long long c = c_lo; c <= c_hi; ++c) mark_for_center(c * scale);
        }
      }
    }
  }
  return bitmap.popcount();
}

/// nm = 2, n = 1, m = 2: product of two 1-d conditions per q, OR-ed over q.
std::int64_t count_boxes_1x2(const SceneConfig& scene, int Q, double delta, BoxWidthMode mode) {
  const std::int64_t D = grid_size(delta);
  if (D > 70000) throw config_error("box count: delta too small for the 2-d bitmap");
  if (!scene.Phi.isIdentity(1e-15)) {
    throw config_error("box count: n=1, m=2 scenes require identity Phi");
  }
  Bitmap2D bitmap(D);
  const double wQ = std::min(scene.psi(Q), 1.0);
  const std::int64_t words = (D + 63) / 64;

  std::vector<std::uint64_t> axis_mask[2];
  for (int q = 1; q <= Q; ++q) {
    const double w = mode == BoxWidthMode::TruncationWidth ? wQ : std::min(scene.psi(q), 1.0);
    if (!(w > 0.0)) continue;
    for (int axis = 0; axis < 2; ++axis) {
      axis_mask[axis].assign(words, 0);
      const double y = scene.y(axis);
      for (long long p = static_cast<long long>(std::floor(y - q - w)) - 1;
           p <= static_cast<long long>(std::ceil(y + w)) + 1; ++p) {
        const double a = std::max(0.0, (y - p - w) / q), b = std::min(1.0, (y - p + w) / q);
        if (b <= a) continue;
        const auto ia = static_cast<std::int64_t>(std::floor(a / delta));
        const auto ib = std::min<std::int64_t>(D - 1, static_cast<std::int64_t>(std::floor(b / delta)));
        for (std::int64_t i = std::max<std::int64_t>(0, ia); i <= ib; ++i) {
          axis_mask[axis][i >> 6] |= 1ULL << (i & 63);
        }
      }
    }
    for (std::int64_t i = 0; i < D; ++i) {
      if (axis_mask[0][i >> 6] & (1ULL << (i & 63))) {
        // whole admissible x2 rows for this column
        for (std::int64_t jw = 0; jw < words; ++jw) {
          if (axis_mask[1][jw]) {
            for (int b = 0; b < 64; ++b) {
              if (axis_mask[1][jw] & (1ULL << b)) {
                const std::int64_t j = jw * 64 + b;
                if (j < D) bitmap.mark_rows(i, j, j);
              }
            }
          }
        }
      }
    }
  }
  return bitmap.popcount();
}

}  // namespace

BoxCountRow box_count(const SceneConfig& scene, int Q, double delta, BoxWidthMode mode) {
  if (Q < 1) throw config_error("box count: Q must be >= 1");
  if (!(delta > 0.0) || delta > 1.0) throw config_error("box count: delta must lie in (0, 1]");
  const int nm = scene.n * scene.m;
  BoxCountRow row;
  row.Q = Q;
  row.delta = delta;
  if (nm == 1) {
    row.boxes = count_boxes_1d(scene, Q, delta, mode);
  } else if (nm == 2 && scene.n == 2) {
    row.boxes = count_boxes_2x1(scene, Q, delta, mode);
  } else if (nm == 2 && scene.m == 2) {
    row.boxes = count_boxes_1x2(scene, Q, delta, mode);
  } else {
    throw config_error("box count: supported scene sizes are nm <= 2");
  }
  return row;
}

std::vector<BoxCountRow> box_count_schedule(const SceneConfig& scene,
                                            const std::vector<ScheduleEntry>& schedule,
                                            BoxWidthMode mode) {
  std::vector<BoxCountRow> rows;
  rows.reserve(schedule.size());
  for (const auto& e : schedule) rows.push_back(box_count(scene, e.Q, e.delta, mode));
  return rows;
}

double fit_slope(const std::vector<std::pair<double, double>>& xy) {
  if (xy.size() < 2) throw config_error("slope fit: need at least two points");
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& [x, y] : xy) {
    sx += x;
    sy += y;
    sxx += x * x;
    sxy += x * y;
  }
  const double npts = static_cast<double>(xy.size());
  const double denom = npts * sxx - sx * sx;
  if (std::fabs(denom) < 1e-30) throw config_error("slope fit: degenerate abscissae");
  return (npts * sxy - sx * sy) / denom;
}

double fit_loglog_slope(const std::vector<BoxCountRow>& rows) {
  if (rows.size() < 3) throw config_error("slope fit: a schedule needs at least three scales");
  std::vector<std::pair<double, double>> xy;
  xy.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.boxes <= 0) throw config_error("slope fit: empty box count in schedule");
    xy.emplace_back(std::log(1.0 / r.delta), std::log(static_cast<double>(r.boxes)));
  }
  return fit_slope(xy);
}

// ---------------------------------------------------------------------------
// Greedy Hausdorff premeasure bounds
// ---------------------------------------------------------------------------

namespace {

/// Lattice cover of a radius-R ball by radius-rho balls: per-axis step
/// 2·rho/sqrt(k) so each cell's circumscribed ball has radius rho.
std::int64_t lattice_cover_count(double R, double rho, int k) {
  const double step = 2.0 * rho / std::sqrt(static_cast<double>(k));
  const auto per_axis = static_cast<std::int64_t>(std::ceil(2.0 * R / step));
  std::int64_t total = 1;
  for (int i = 0; i < k; ++i) total *= std::max<std::int64_t>(1, per_axis);
  return total;
}

}  // namespace

double hausdorff_f_upper(const CoverTarget& target, const DimensionFunction& f, double rho) {
  if (!(rho > 0.0)) throw config_error("cover bound: rho must be positive");
  double total = 0.0;
  for (const auto& ball : target.balls) {
    if (ball.radius <= rho) {
      total += f(ball.radius);
    } else {
      const int k = static_cast<int>(ball.center.size());
      total += static_cast<double>(lattice_cover_count(ball.radius, rho, k)) * f(rho);
    }
  }
  for (const auto& slab : target.slabs) {
    if (slab.width >= rho) {
      // no thin-direction saving: treat like the clip ball itself
      const int k = slab.plane.k;
      total += static_cast<double>(lattice_cover_count(slab.clip.radius, rho, k)) * f(rho);
      continue;
    }
    // centers on the plane: a radius-rho ball centred on the plane covers the
    // slab over an along-plane box of half-width sqrt(rho^2 - width^2)
    const int l = slab.plane.l;
    if (l == 0) {
      total += f(rho);
      continue;
    }
    const double reach = std::sqrt(std::max(0.0, rho * rho - slab.width * slab.width));
    const double step = 2.0 * reach / std::sqrt(static_cast<double>(l));
    std::int64_t count = 1;
    const auto per_axis =
        static_cast<std::int64_t>(std::ceil(2.0 * slab.clip.radius / step));
    for (int i = 0; i < l; ++i) count *= std::max<std::int64_t>(1, per_axis);
    total += static_cast<double>(count) * f(rho);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Mass-distribution bound check
// ---------------------------------------------------------------------------

MdpReport verify_mdp_bound(const std::function<double(const Ball&)>& mu, const Ball& domain,
                           const DimensionFunction& f, std::size_t samples, std::uint64_t seed,
                           const NormSpec& norm) {
  if (samples == 0) throw config_error("mdp bound: need at least one sample");
  const int k = static_cast<int>(domain.center.size());
  CounterRng rng(seed, 0x6d64702dULL);
  const double r_hi = domain.radius;
  const double r_lo = r_hi * 1e-4;
  MdpReport report;
  report.samples = samples;
  report.mass = mu(domain);
  std::vector<std::pair<double, double>> log_points;
  log_points.reserve(samples);
  std::uint64_t ctr = 0;
  for (std::size_t s = 0; s < samples; ++s) {
    // centre uniform in the domain (rejection from the bounding box)
    Vec c(k);
    for (;;) {
      for (int i = 0; i < k; ++i) {
        c(i) = domain.center(i) + rng.uniform(ctr++, -domain.radius, domain.radius);
      }
      if (norm(c - domain.center) <= domain.radius) break;
    }
    const double r = r_lo * std::exp(rng.uniform(ctr++) * std::log(r_hi / r_lo));
    const double mass = mu(Ball(c, r));
    if (mass > 0.0) {
      report.max_ratio = std::max(report.max_ratio, mass / f(r));
      log_points.emplace_back(std::log(r), std::log(mass));
    }
  }
  if (log_points.size() >= 2) report.exponent = fit_slope(log_points);
  return report;
}

}  // namespace linforms
