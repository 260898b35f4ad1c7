// linforms — geometry implementation.
// SPDX-License-Identifier: MIT
#include "linforms/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace linforms {

// ---------------------------------------------------------------------------
// Norms and balls
// ---------------------------------------------------------------------------

NormSpec NormSpec::block_max(int n, int m) {
  if (n < 1 || m < 1) throw config_error("block-max norm: n and m must be >= 1");
  NormSpec s;
  s.kind = Kind::BlockMax;
  s.n = n;
  s.m = m;
  return s;
}

double NormSpec::operator()(const Vec& x) const {
  if (kind == Kind::Euclidean) return x.norm();
  if (x.size() != static_cast<Eigen::Index>(n) * m) {
    throw config_error("block-max norm: vector length must be n*m");
  }
  double best = 0.0;
  for (int l = 0; l < m; ++l) {
    best = std::max(best, x.segment(static_cast<Eigen::Index>(l) * n, n).norm());
  }
  return std::sqrt(static_cast<double>(n)) * best;
}

bool ball_contains(const Ball& outer, const Ball& inner, const NormSpec& norm, double tol) {
  const double d = norm(inner.center - outer.center);
  return d + inner.radius <= outer.radius + tol * std::max(1.0, outer.radius);
}

bool balls_disjoint(const Ball& a, const Ball& b, const NormSpec& norm, double tol) {
  return norm(a.center - b.center) > a.radius + b.radius + tol;
}

double unit_ball_volume(const NormSpec& norm, int k) {
  if (k < 1) throw config_error("ball volume: dimension must be >= 1");
  auto euclid_unit = [](int d) {
    // v_d = pi^{d/2} / Gamma(d/2 + 1)
    return std::pow(std::numbers::pi, d / 2.0) / std::tgamma(d / 2.0 + 1.0);
  };
  if (norm.kind == NormSpec::Kind::Euclidean) return euclid_unit(k);
  if (k != norm.n * norm.m) throw config_error("ball volume: k must equal n*m for block-max");
  // Radius-1 block-max ball = product over m blocks of Euclidean n-balls of
  // radius 1/sqrt(n).
  const double per_block = euclid_unit(norm.n) * std::pow(norm.n, -norm.n / 2.0);
  return std::pow(per_block, norm.m);
}

double ball_volume(const NormSpec& norm, int k, double radius) {
  if (!(radius >= 0.0)) throw config_error("ball volume: radius must be >= 0");
  return unit_ball_volume(norm, k) * std::pow(radius, k);
}

// ---------------------------------------------------------------------------
// AffinePlane
// ---------------------------------------------------------------------------

namespace {

/// Deterministic sign convention: flip each column so its entry of largest
/// magnitude (first such index) is positive.
void fix_column_signs(Eigen::MatrixXd& M) {
  for (Eigen::Index c = 0; c < M.cols(); ++c) {
    Eigen::Index at = 0;
    M.col(c).cwiseAbs().maxCoeff(&at);
    if (M(at, c) < 0) M.col(c) = -M.col(c);
  }
}

}  // namespace

AffinePlane AffinePlane::from_equations(const Eigen::MatrixXd& N, const Vec& b) {
  const int k = static_cast<int>(N.cols());
  const int rows = static_cast<int>(N.rows());
  if (rows < 1 || rows > k) throw config_error("affine plane: need 1..k equation rows");
  if (b.size() != rows) throw config_error("affine plane: offset length must match rows");

  AffinePlane plane;
  plane.k = k;
  plane.l = k - rows;

  // Orthonormalize the row space (thin QR of N^T); carry the offsets along so
  // normals * x = offsets still describes the same set.
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(N.transpose());
  Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(k, rows);
  Eigen::MatrixXd R = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
  for (int i = 0; i < rows; ++i) {
    if (std::fabs(R(i, i)) < 1e-12) throw config_error("affine plane: equation rows are dependent");
  }
  // N = (Q R)^T = R^T Q^T, so N x = b  <=>  Q^T x = R^{-T} b.
  plane.normals = Q.transpose();
  plane.offsets = R.transpose().triangularView<Eigen::Lower>().solve(b);
  plane.base = Q * plane.offsets;  // minimal-norm solution

  if (plane.l > 0) {
    // Tangent basis: remaining columns of a full QR of the normal directions.
    Eigen::HouseholderQR<Eigen::MatrixXd> full(Q);
    Eigen::MatrixXd QQ = full.householderQ() * Eigen::MatrixXd::Identity(k, k);
    plane.tangent = QQ.rightCols(plane.l);
    fix_column_signs(plane.tangent);
  } else {
    plane.tangent = Eigen::MatrixXd::Zero(k, 0);
  }
  return plane;
}

double AffinePlane::euclid_dist(const Vec& x) const { return (normals * x - offsets).norm(); }

Vec AffinePlane::project(const Vec& x) const {
  return x - normals.transpose() * (normals * x - offsets);
}

Vec AffinePlane::point_at(const Vec& u) const {
  if (u.size() != l) throw config_error("affine plane: tangent coordinate length must be l");
  return base + tangent * u;
}

Vec AffinePlane::coords_of(const Vec& x) const { return tangent.transpose() * (x - base); }

// ---------------------------------------------------------------------------
// ResonantPlane
// ---------------------------------------------------------------------------

ResonantPlane ResonantPlane::make(Eigen::VectorXi q, Eigen::VectorXi p, Vec y,
                                  Eigen::MatrixXd Phi) {
  ResonantPlane r;
  r.n = static_cast<int>(q.size());
  r.m = static_cast<int>(p.size());
  if (r.n < 1 || r.m < 1) throw config_error("resonant plane: need n >= 1 and m >= 1");
  if (q.isZero()) throw config_error("resonant plane: q must be nonzero");
  if (y.size() != r.m) throw config_error("resonant plane: y length must be m");
  if (Phi.rows() != r.m || Phi.cols() != r.m) {
    throw config_error("resonant plane: Phi must be m x m");
  }
  r.q = std::move(q);
  r.p = std::move(p);
  r.y = std::move(y);
  r.Phi = std::move(Phi);
  return r;
}

double ResonantPlane::q_sup() const { return q.cwiseAbs().maxCoeff(); }

Vec ResonantPlane::rhs() const {
  // q·X_l = y_l - (p·Phi)_l
  Vec pPhi = (p.cast<double>().transpose() * Phi).transpose();
  return y - pPhi;
}

double ResonantPlane::dist(const Vec& x, const NormSpec& norm) const {
  if (x.size() != static_cast<Eigen::Index>(n) * m) {
    throw config_error("resonant plane: point length must be n*m");
  }
  const Vec c = rhs();
  const double qn = q_euclid();
  const Vec qd = q.cast<double>();
  if (norm.kind == NormSpec::Kind::BlockMax) {
    double sup = 0.0;
    for (int l = 0; l < m; ++l) {
      sup = std::max(sup, std::fabs(qd.dot(x.segment(static_cast<Eigen::Index>(l) * n, n)) - c(l)));
    }
    return std::sqrt(static_cast<double>(n)) * sup / qn;
  }
  double ss = 0.0;
  for (int l = 0; l < m; ++l) {
    const double r = qd.dot(x.segment(static_cast<Eigen::Index>(l) * n, n)) - c(l);
    ss += (r / qn) * (r / qn);
  }
  return std::sqrt(ss);
}

AffinePlane ResonantPlane::realize() const {
  const int k = n * m;
  Eigen::MatrixXd N = Eigen::MatrixXd::Zero(m, k);
  for (int l = 0; l < m; ++l) {
    N.block(l, l * n, 1, n) = q.cast<double>().transpose();
  }
  return AffinePlane::from_equations(N, rhs());
}

// ---------------------------------------------------------------------------
// five_r_cover
// ---------------------------------------------------------------------------

std::vector<std::size_t> five_r_cover(const std::vector<Ball>& balls, const NormSpec& norm) {
  std::vector<std::size_t> order(balls.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (balls[a].radius != balls[b].radius) return balls[a].radius > balls[b].radius;
    return a < b;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i : order) {
    bool ok = true;
    for (std::size_t j : kept) {
      if (!balls_disjoint(balls[i], balls[j], norm)) {
        ok = false;
        break;
      }
    }
    if (ok) kept.push_back(i);
  }
  std::sort(kept.begin(), kept.end());
  return kept;
}

void check_five_r_cover(const std::vector<Ball>& balls, const std::vector<std::size_t>& selected,
                        const NormSpec& norm) {
  for (std::size_t a = 0; a < selected.size(); ++a) {
    for (std::size_t b = a + 1; b < selected.size(); ++b) {
      if (!balls_disjoint(balls[selected[a]], balls[selected[b]], norm)) {
        throw property_error("five-r-cover-disjointness",
                             "kept balls " + std::to_string(selected[a]) + " and " +
                                 std::to_string(selected[b]) + " intersect");
      }
    }
  }
  for (std::size_t i = 0; i < balls.size(); ++i) {
    bool covered = false;
    for (std::size_t s : selected) {
      if (balls[s].radius + kGeomTol < balls[i].radius) continue;
      if (ball_contains(balls[s].scaled(5.0), balls[i], norm, 1e-9)) {
        covered = true;
        break;
      }
    }
    if (!covered) {
      throw property_error("five-r-cover-coverage",
                           "ball " + std::to_string(i) + " is not inside any kept 5x dilate");
    }
  }
}

// ---------------------------------------------------------------------------
// separated_pack
// ---------------------------------------------------------------------------

std::vector<Vec> separated_pack(const AffinePlane& plane, const Ball& container,
                                double separation, const NormSpec& norm,
                                const PackOptions& opts) {
  if (!(separation > 0.0)) throw config_error("separated pack: separation must be positive");
  std::vector<Vec> accepted;

  if (plane.l == 0) {
    if (norm(plane.base - container.center) <= container.radius) accepted.push_back(plane.base);
    return accepted;
  }

  const double h = separation * 0.25;
  // Tangent-coordinate bounding box of the container around the projection
  // of its center (orthonormal tangent => distances do not shrink).
  const Vec u0 = plane.coords_of(container.center);
  const double reach = container.radius + h;

  std::vector<std::int64_t> lo(plane.l), hi(plane.l);
  double cells = 1.0;
  for (int d = 0; d < plane.l; ++d) {
    lo[d] = static_cast<std::int64_t>(std::ceil((u0(d) - reach) / h));
    hi[d] = static_cast<std::int64_t>(std::floor((u0(d) + reach) / h));
    cells *= std::max<double>(0.0, static_cast<double>(hi[d] - lo[d] + 1));
  }
  if (cells > static_cast<double>(opts.max_grid) && opts.max_count == SIZE_MAX) {
    throw config_error("separated pack: lattice too large; cap max_count or enlarge separation");
  }

  // Lex-order scan over the absolute lattice u = i*h.
  std::vector<std::int64_t> idx(lo);
  Vec u(plane.l);
  while (true) {
    for (int d = 0; d < plane.l; ++d) u(d) = static_cast<double>(idx[d]) * h;
    Vec x = plane.point_at(u);
    if (norm(x - container.center) <= container.radius) {
      bool far = true;
      for (const Vec& a : accepted) {
        if (norm(x - a) <= separation) {
          far = false;
          break;
        }
      }
      if (far) {
        accepted.push_back(std::move(x));
        if (accepted.size() >= opts.max_count) return accepted;
      }
    }
    int d = plane.l - 1;
    while (d >= 0 && ++idx[d] > hi[d]) {
      idx[d] = lo[d];
      --d;
    }
    if (d < 0) break;
  }
  return accepted;
}

// ---------------------------------------------------------------------------
// Measure helpers
// ---------------------------------------------------------------------------

double interval_union_length(std::vector<std::pair<double, double>> intervals) {
  std::erase_if(intervals, [](const auto& iv) { return !(iv.second > iv.first); });
  std::sort(intervals.begin(), intervals.end());
  double total = 0.0, right = -std::numeric_limits<double>::infinity();
  for (const auto& [a, b] : intervals) {
    if (a > right) {
      total += b - a;
      right = b;
    } else if (b > right) {
      total += b - right;
      right = b;
    }
  }
  return total;
}

double disk_slab_area(double R, double a, double b) {
  if (!(R >= 0.0)) throw config_error("disk slab: radius must be >= 0");
  a = std::clamp(a, -R, R);
  b = std::clamp(b, -R, R);
  if (b <= a) return 0.0;
  auto F = [R](double t) { return t * std::sqrt(std::max(0.0, R * R - t * t)) + R * R * std::asin(std::clamp(t / R, -1.0, 1.0)); };
  return F(b) - F(a);
}

double ball_intersection_measure(const Ball& a, const Ball& b, const NormSpec& norm) {
  const int k = static_cast<int>(a.center.size());
  if (b.center.size() != k) throw config_error("ball intersection: dimension mismatch");
  // Supported norms are Euclidean multiples, so work with Euclidean radii.
  double scale = 1.0;
  if (norm.kind == NormSpec::Kind::BlockMax) {
    if (norm.m != 1 || norm.n != k)
      throw config_error("ball intersection: block-max norm needs a single block of size k");
    scale = std::sqrt(static_cast<double>(norm.n));
  }
  const double ra = a.radius / scale, rb = b.radius / scale;
  const double d = (a.center - b.center).norm();
  if (d >= ra + rb) return 0.0;
  if (d + std::min(ra, rb) <= std::max(ra, rb)) {
    return ball_volume(norm, k, std::min(a.radius, b.radius));
  }
  if (k == 1) return std::min(ra + rb - d, 2.0 * std::min(ra, rb));
  if (k != 2) throw config_error("ball intersection: implemented for k <= 2 only");
  // Lens area: each disk contributes the cap beyond the radical line at
  // signed offset x from its own center.
  const double xa = (d * d + ra * ra - rb * rb) / (2.0 * d);
  const double xb = d - xa;
  return disk_slab_area(ra, xa, ra) + disk_slab_area(rb, xb, rb);
}

Ball f_scaled_ball(const Ball& ball, const DimensionFunction& f, int k) {
  if (k < 1) throw config_error("f-scaled ball: k must be >= 1");
  return Ball(ball.center, std::pow(f(ball.radius), 1.0 / static_cast<double>(k)));
}

double hausdorff_f_upper(const std::vector<Ball>& cover, const DimensionFunction& f, double rho) {
  if (!(rho > 0.0)) throw config_error("premeasure: scale rho must be positive");
  double total = 0.0;
  for (const Ball& b : cover) {
    if (b.radius > rho * (1.0 + 1e-12)) {
      throw config_error("premeasure: cover contains a ball larger than the scale rho");
    }
    total += f(b.radius);
  }
  return total;
}

double raster_ball_minus_balls(const Ball& B, const std::vector<Ball>& holes,
                               const NormSpec& norm, int grid) {
  if (B.center.size() != 2) throw config_error("raster measure: implemented for k = 2 only");
  if (grid < 2) throw config_error("raster measure: grid must be >= 2");
  const double R = B.radius;
  const double h = 2.0 * R / grid;
  std::int64_t inside = 0;
  Vec x(2);
  for (int i = 0; i < grid; ++i) {
    x(0) = B.center(0) - R + (i + 0.5) * h;
    for (int j = 0; j < grid; ++j) {
      x(1) = B.center(1) - R + (j + 0.5) * h;
      if (norm(x - B.center) > R) continue;
      bool hole = false;
      for (const Ball& H : holes) {
        if (norm(x - H.center) <= H.radius) {
          hole = true;
          break;
        }
      }
      if (!hole) ++inside;
    }
  }
  return static_cast<double>(inside) * h * h;
}

}  // namespace linforms
