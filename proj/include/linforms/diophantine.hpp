// linforms — Diophantine scenes: systems of m linear forms in n integer
// variables with inhomogeneous shift y and twist matrix Phi, primitivity
// partitions, denominator/numerator pair enumeration, witness search, and
// the height constant M bounding the numerators that can matter.
// SPDX-License-Identifier: MIT
#pragma once

#include <optional>
#include <vector>

#include "linforms/dimfun.hpp"
#include "linforms/geometry.hpp"

namespace linforms {

// ---------------------------------------------------------------------------
// Primitivity partitions
// ---------------------------------------------------------------------------

/// A partition of the index set {0..n-1} into blocks; q is primitive when the
/// gcd of |q_i| over every block equals 1.
struct Partition {
  std::vector<int> block_of;  // block index per coordinate, 0..blocks-1

  static Partition trivial(int n);                       // one block
  static Partition from_blocks(std::vector<int> block_of);
  int size() const { return static_cast<int>(block_of.size()); }
  int blocks() const;
};

/// gcd over every block equals 1 (a block of zeros has gcd 0, hence fails).
bool is_primitive(const Eigen::VectorXi& q, const Partition& partition);

// ---------------------------------------------------------------------------
// Scenes
// ---------------------------------------------------------------------------

/// An n x m approximation scene: the limsup set of points X in [0,1]^{nm}
/// with |q·X + p·Phi - y|_sup < psi(|q|_sup) for infinitely many admissible
/// (q, p).
struct SceneConfig {
  int n = 1;
  int m = 1;
  Eigen::MatrixXd Phi;  // m x m
  Vec y;                // length m
  ApproxFunction psi = ApproxFunction::zero();
  std::optional<Partition> partition;  // primitivity restriction on q

  static SceneConfig make(int n, int m, ApproxFunction psi);
  static SceneConfig make(int n, int m, ApproxFunction psi, Eigen::MatrixXd Phi, Vec y,
                          std::optional<Partition> partition);

  /// The ambient norm of the transference machinery: sqrt(n)·max-block.
  NormSpec norm() const { return NormSpec::block_max(n, m); }

  ResonantPlane plane(const Eigen::VectorXi& q, const Eigen::VectorXi& p) const;
};

// ---------------------------------------------------------------------------
// Height constant and enumeration
// ---------------------------------------------------------------------------

/// M := max(base_factor·n, sup_{r >= 1} sup_factor/sqrt(n) · g(ψ̂(r)/r)^{1/m})
/// with ψ̂ = min(ψ, 1).  The default (2, 2) instance bounds which numerators
/// p can produce resonant neighborhoods meeting the unit cube; the (3, 3)
/// variant is the analogous bound after the θ-transform.
double compute_M(const TransferPair& pair, const ApproxFunction& psi, int n,
                 double base_factor = 2.0, double sup_factor = 2.0);

/// All admissible pairs (q, p): q integer, 1 <= |q|_sup <= Q, primitive when
/// the scene has a partition; p integer with |p·Phi|_sup <= M·|q|_sup.
/// Ordered by |q|_sup ascending, then lexicographically by (q, p).
struct QPPair {
  Eigen::VectorXi q;
  Eigen::VectorXi p;
};
std::vector<QPPair> enumerate_pairs(const SceneConfig& scene, int Q, double M);

// ---------------------------------------------------------------------------
// Witnesses
// ---------------------------------------------------------------------------

struct Witness {
  Eigen::VectorXi q;
  Eigen::VectorXi p;
  double error = 0.0;  // |q·X + p·Phi - y|_sup
};

/// All q with G <= |q|_sup <= Q (primitive when required) for which some
/// integer p achieves |q·X + p·Phi - y|_sup < psi(|q|_sup); the recorded p is
/// the best one.  The p-search is exact for Phi = identity (componentwise
/// nearest integer) and otherwise scans the +-1 box around the rounded
/// solution of p·Phi = y - q·X, which is exact for diagonally dominant Phi.
std::vector<Witness> approx_witnesses(const SceneConfig& scene, const Vec& x, int Q, int G = 1);

/// True iff some q with G <= |q|_sup <= Q has a witness at x; early-exits.
bool has_witness(const SceneConfig& scene, const Vec& x, int Q, int G = 1);

}  // namespace linforms
