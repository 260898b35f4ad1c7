// linforms — balls, affine planes, resonant planes, covering/packing
// primitives (5r-covers, separated packings), and the measure helpers used
// by the construction engine (exact ball volumes, interval unions, disk/slab
// areas, f-scaled balls, Hausdorff premeasure of covers).
// SPDX-License-Identifier: MIT
#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <vector>

#include "linforms/common.hpp"
#include "linforms/dimfun.hpp"

namespace linforms {

using Vec = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Norms and balls
// ---------------------------------------------------------------------------

/// Norm on R^k.  Euclidean is the plain 2-norm.  BlockMax is the product
/// norm sqrt(n) * max_l |x_l|_2 where x splits into m blocks of n entries
/// (block l occupies entries [l*n, (l+1)*n)); for m = 1 it is sqrt(n) times
/// the Euclidean norm.
struct NormSpec {
  enum class Kind { Euclidean, BlockMax };
  Kind kind = Kind::Euclidean;
  int n = 1;
  int m = 1;

  static NormSpec euclidean() { return NormSpec{}; }
  static NormSpec block_max(int n, int m);

  double operator()(const Vec& x) const;
};

/// Closed ball in a norm supplied by context.
struct Ball {
  Vec center;
  double radius = 0.0;

  Ball() = default;
  Ball(Vec c, double r) : center(std::move(c)), radius(r) {}

  /// Same center, radius scaled by `factor` (the "3B", "4B", "B/2" dilates).
  Ball scaled(double factor) const { return Ball(center, radius * factor); }
};

/// inner ⊂ outer:  ||c_in - c_out|| + r_in <= r_out (+ tol slack).
bool ball_contains(const Ball& outer, const Ball& inner, const NormSpec& norm,
                   double tol = kGeomTol);

/// Closed balls are disjoint iff the center distance exceeds the radius sum;
/// tol > 0 demands a positive gap of at least tol.
bool balls_disjoint(const Ball& a, const Ball& b, const NormSpec& norm, double tol = 0.0);

/// Volume of the unit ball of the norm in R^k (Lebesgue = H^k normalization
/// by diameter yields the same value for these convex bodies' use here:
/// we use Lebesgue measure throughout and record the constants c1, c2 from it).
double unit_ball_volume(const NormSpec& norm, int k);

/// Volume of a radius-r ball: unit volume * r^k.
double ball_volume(const NormSpec& norm, int k, double radius);

// ---------------------------------------------------------------------------
// Affine planes
// ---------------------------------------------------------------------------

/// Affine subspace {x in R^k : normals * x = offsets} of dimension l,
/// with orthonormalized normal rows, a base point, and an orthonormal
/// tangent basis (deterministic column signs).
struct AffinePlane {
  Eigen::MatrixXd normals;  // (k-l) x k, orthonormal rows
  Vec offsets;              // length k-l
  Vec base;                 // a point on the plane
  Eigen::MatrixXd tangent;  // k x l, orthonormal columns
  int k = 0;
  int l = 0;

  /// Builds from independent (not necessarily orthonormal) rows N·x = b.
  static AffinePlane from_equations(const Eigen::MatrixXd& N, const Vec& b);

  /// Euclidean distance from x to the plane.
  double euclid_dist(const Vec& x) const;

  /// Orthogonal projection of x onto the plane.
  Vec project(const Vec& x) const;

  /// base + tangent * u.
  Vec point_at(const Vec& u) const;

  /// Tangent coordinates of the projection of x.
  Vec coords_of(const Vec& x) const;
};

// ---------------------------------------------------------------------------
// Resonant planes
// ---------------------------------------------------------------------------

/// The resonant set {X : q·X_l + (p·Phi)_l = y_l, l = 1..m} of a system of m
/// linear forms in n variables, flattened to R^{nm} with column-block layout
/// (block l of x holds X_l).  q is a nonzero integer vector, p an integer
/// vector, y a real shift, Phi an m x m real matrix.
struct ResonantPlane {
  Eigen::VectorXi q;      // length n, nonzero
  Eigen::VectorXi p;      // length m
  Vec y;                  // length m
  Eigen::MatrixXd Phi;    // m x m
  int n = 1;
  int m = 1;

  static ResonantPlane make(Eigen::VectorXi q, Eigen::VectorXi p, Vec y, Eigen::MatrixXd Phi);

  double q_euclid() const { return q.cast<double>().norm(); }
  double q_sup() const;

  /// Right-hand sides c_l = y_l - (p·Phi)_l of the m block equations.
  Vec rhs() const;

  /// Distance from x (flattened R^{nm}) to the plane: the exact minimum of
  /// ||x - z|| over plane points z.  BlockMax norm: sqrt(n) * max_l
  /// |q·x_l - c_l| / |q|_2;  Euclidean: the root-sum-square per block.
  double dist(const Vec& x, const NormSpec& norm) const;

  /// The same set as a general AffinePlane in R^{nm}.
  AffinePlane realize() const;
};

// ---------------------------------------------------------------------------
// Covers and packings
// ---------------------------------------------------------------------------

/// Greedy 5r-cover selection: processes balls by decreasing radius (ties by
/// input index), keeps a ball iff it is disjoint from everything kept.
/// The kept family is pairwise disjoint and every input ball is contained in
/// the 5x dilate of some kept ball of at least its own radius.
std::vector<std::size_t> five_r_cover(const std::vector<Ball>& balls, const NormSpec& norm);

/// Verifies the two 5r-cover conclusions for `selected` over `balls`.
/// Throws property_error naming the violated clause.
void check_five_r_cover(const std::vector<Ball>& balls, const std::vector<std::size_t>& selected,
                        const NormSpec& norm);

struct PackOptions {
  std::size_t max_count = SIZE_MAX;   // stop after this many accepted points
  std::size_t max_grid = 200'000'000; // guard on scanned lattice size
};

/// Maximal `separation`-separated point set on plane ∩ container, built by a
/// deterministic lex-order lattice scan at step separation/4 in tangent
/// coordinates (anchored at the plane's base point); a grid point is accepted
/// iff it lies in the closed container ball and is farther than `separation`
/// from every accepted point.  With max_count = SIZE_MAX the result is
/// maximal up to the grid resolution: no further grid point can be added.
std::vector<Vec> separated_pack(const AffinePlane& plane, const Ball& container,
                                double separation, const NormSpec& norm,
                                const PackOptions& opts = {});

// ---------------------------------------------------------------------------
// Measure helpers
// ---------------------------------------------------------------------------

/// Total length of a union of closed intervals (sweep line, exact).
double interval_union_length(std::vector<std::pair<double, double>> intervals);

/// Area of {x in R^2 : |x - c| <= R, a <= (x - c)·u <= b} for a unit vector u
/// — a slab of the disk between signed offsets a and b.
double disk_slab_area(double R, double a, double b);

/// Lebesgue measure of the intersection of two balls (interval overlap in
/// R^1, lens area in R^2; supported norms only).
double ball_intersection_measure(const Ball& a, const Ball& b, const NormSpec& norm);

/// B^f: the ball with the same center and radius f(r)^{1/k} (so its
/// f-volume f(radius) equals V^f(B) by construction).
Ball f_scaled_ball(const Ball& ball, const DimensionFunction& f, int k);

/// Hausdorff premeasure of a cover at scale rho: Σ f(r_i) over the cover,
/// after checking every radius is <= rho.  This is the quantity whose
/// infimum over rho-covers defines H^f; any single cover provides an upper
/// bound on H^f_rho of the covered set.
double hausdorff_f_upper(const std::vector<Ball>& cover, const DimensionFunction& f, double rho);

/// Monte-Carlo style area of ball ∩ complement of a union of balls on a
/// regular grid of `grid` points per axis across B's bounding box (cell
/// centers).  Used only as a cross-check when analytic bounds are
/// inconclusive; k = 2 only.
double raster_ball_minus_balls(const Ball& B, const std::vector<Ball>& holes,
                               const NormSpec& norm, int grid);

}  // namespace linforms
