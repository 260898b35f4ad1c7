// linforms — limsup-set Cantor construction engine.
//
// A scene bundles a family of affine planes (grouped into shells of
// decreasing envelope radius), a transfer pair (f, g), a norm, and an
// ambient ball.  From it the engine builds the nested structures that
// carry mass onto the limsup set:
//
//   * kept collections (build_kgb): balls of radius g(Y)^(1/m) centred on
//     the shell planes, whose 3-scaled copies are pairwise disjoint and
//     inside the host ball, with a guaranteed measure yield;
//   * plane packings (build_packing): arithmetic runs of radius-Y balls
//     along one plane inside half of a kept ball, with separation,
//     measure-sandwich, and cardinality-window assertions;
//   * the Cantor tree (build_cantor): levels of local refinements with mass
//     floors, scale halving between stages, a recursive probability
//     measure, and a deterministic serialized form.
//
// Every structural property is asserted at build time (violations raise
// property_error naming the property) and can be re-checked on a finished
// tree with check_cantor_properties.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "linforms/common.hpp"
#include "linforms/dimfun.hpp"
#include "linforms/diophantine.hpp"
#include "linforms/geometry.hpp"

namespace linforms {

// ---------------------------------------------------------------------------
// Plane sources
// ---------------------------------------------------------------------------

/// A family of affine planes grouped into shells (1-based).  All planes of a
/// shell share the shell's envelope radius upsilon(shell); envelopes are
/// strictly decreasing to zero so deeper shells are finer.
class PlaneSource {
 public:
  virtual ~PlaneSource() = default;
  /// Ambient dimension the planes live in.
  virtual int ambient_dim() const = 0;
  /// Dimension of each plane (0 = point family).
  virtual int plane_dim() const = 0;
  /// Envelope radius of `shell`; strictly decreasing in shell.
  virtual double upsilon(int shell) const = 0;
  /// Deepest shell the source can produce (inclusive).
  virtual int max_shell() const = 0;
  /// Every plane of `shell` meeting the closed Euclidean ball `region`
  /// (a few near-misses may be included; no intersecting plane is missed).
  virtual std::vector<AffinePlane> planes_near(int shell, const Ball& region) const = 0;
  /// Ball on which every shell is uniformly dense (planes appear on all
  /// sides of every interior point at the shell's spacing).  Constructions
  /// must start inside it: near the boundary of the plane family's support
  /// the kept-collection yield genuinely degenerates.  An infinite radius
  /// means the source declares no bound (hand-built test sources).
  virtual Ball dense_region() const {
    return Ball(Vec::Zero(ambient_dim()), std::numeric_limits<double>::infinity());
  }
  virtual std::string describe() const = 0;
};

/// A hand-specified shell list, mainly for tests and synthetic experiments.
class ExplicitSource final : public PlaneSource {
 public:
  ExplicitSource(int ambient_dim, int plane_dim, std::vector<double> upsilon,
                 std::vector<std::vector<AffinePlane>> shells);
  int ambient_dim() const override { return ambient_; }
  int plane_dim() const override { return plane_dim_; }
  double upsilon(int shell) const override;
  int max_shell() const override { return static_cast<int>(upsilon_.size()); }
  std::vector<AffinePlane> planes_near(int shell, const Ball& region) const override;
  std::string describe() const override;

 private:
  int ambient_ = 1;
  int plane_dim_ = 0;
  std::vector<double> upsilon_;
  std::vector<std::vector<AffinePlane>> shells_;
};

/// Dyadic grid source on the span [0, 2^e]:
///   ambient 1: shell t holds the points i * 2^(e-t), i = 0..2^t;
///   ambient 2: shell t holds the vertical lines x1 = i * 2^(e-t).
/// The envelope is upsilon(t) = 4^(e-t), so the grid spacing 2^(e-t) equals
/// g(upsilon)^(1/m) for the transfer pairs used with these scenes (square
/// root scaling), and consecutive shells refine spacing by 2 while the
/// envelope shrinks by 4.  Planes are constructed exactly (no least-squares
/// step) so their bases and tangents carry no rounding error.
class DyadicSource final : public PlaneSource {
 public:
  DyadicSource(int ambient_dim, int span_exponent);
  int ambient_dim() const override { return ambient_; }
  int plane_dim() const override { return ambient_ - 1; }
  double upsilon(int shell) const override;
  int max_shell() const override { return kMaxShell; }
  std::vector<AffinePlane> planes_near(int shell, const Ball& region) const override;
  /// Inscribed ball of the span cube [0, 2^e]^ambient.
  Ball dense_region() const override;
  std::string describe() const override;
  double spacing(int shell) const;

  /// Deepest shell: keeps every lattice index below 2^53 for any point of
  /// the span, so index arithmetic stays exact in double precision.
  static constexpr int kMaxShell = 48;

 private:
  int ambient_ = 1;
  int e_ = 0;
};

/// Resonant planes of a Diophantine approximation scene.  Shell j holds the
/// realized planes of the pairs (p, q) with |q|_sup = j (primitive q when the
/// scene carries a partition), and the envelope is upsilon(j) = psi(j) / j.
/// `m_bound` is the numerator height M (see compute_M) deciding which p are
/// admissible.
class DiophantineSource final : public PlaneSource {
 public:
  DiophantineSource(SceneConfig scene, int max_shell, double m_bound);
  int ambient_dim() const override;
  int plane_dim() const override;
  double upsilon(int shell) const override;
  int max_shell() const override { return max_shell_; }
  std::vector<AffinePlane> planes_near(int shell, const Ball& region) const override;
  /// Inscribed ball of the unit cube [0, 1]^{nm} the scene approximates in.
  Ball dense_region() const override;
  std::string describe() const override;

 private:
  const std::vector<AffinePlane>& shell_planes(int shell) const;
  SceneConfig scene_;
  int max_shell_ = 1;
  double m_bound_ = 0.0;
  mutable std::vector<std::optional<std::vector<AffinePlane>>> cache_;
};

// ---------------------------------------------------------------------------
// Scene and constants
// ---------------------------------------------------------------------------

/// A construction scene.  The supported norms are those identical to the
/// Euclidean norm (Euclidean itself, or the one-entry block-max norm), so
/// every ball is a round Euclidean ball and the packing calibration applies
/// exactly; other norms raise config_error.
struct MtpScene {
  std::shared_ptr<const PlaneSource> source;
  TransferPair pair;  // f, g with k = ambient dimension, l = plane dimension
  NormSpec norm;
  Ball omega;  // ambient ball; constructions must stay inside it

  static MtpScene make(std::shared_ptr<const PlaneSource> source, TransferPair pair,
                       NormSpec norm, Ball omega);

  int k() const { return pair.k; }
  int l() const { return pair.l; }
  int m() const { return pair.m; }
  double upsilon(int shell) const { return source->upsilon(shell); }
  /// Radius of kept balls at `shell`: g(upsilon(shell))^(1/m).
  double upsilon_tilde(int shell) const;
};

/// Packing cardinality window for plane dimension l: in every valid packing,
/// count / (r(A)/upsilon)^l lies in [d1, d2].  l = 0 packings have exactly
/// one ball, so the window is a fixed bracket around 1; l = 1 values are
/// frozen from tools/calibrate_pack (0.9 * smallest and 1.1 * largest
/// measured ratio over the calibration instances).
struct PackingWindow {
  double d1 = 0.0;
  double d2 = 0.0;
};
PackingWindow packing_window(int l);

/// Comparison constants of a construction:
///   c1 * V^k(B) <= H^k(B) <= c2 * V^k(B) with V^k(B) = r(B)^k and H^k the
///   Lebesgue measure (c1 = min(1/2, vol of the unit ball), c2 = max(2, same));
///   c3 = (1/(2^(k+3) * 5^k * 15^k)) * (c1/c2)^2, the per-stage mass floor;
///   d1, d2 the packing window; eta the mass target; epsilon_b0/epsilon_b the
///   fine-scale thresholds (1/(2 d2)) (c1/c2)^2 (c3/(2^k 4^k)) * f(r(B0))/eta
///   and the same without the trailing factor (recorded per stage as
///   diagnostics; see the stage audits).
struct EngineConstants {
  int k = 1;
  int l = 0;
  double c1 = 0.5;
  double c2 = 2.0;
  double c3 = 0.0;
  double d1 = 0.0;
  double d2 = 0.0;
  double eta = 0.0;         // filled by build_cantor
  double epsilon_b0 = 0.0;  // filled by build_cantor
  double epsilon_b = 0.0;   // filled by build_cantor

  static EngineConstants make(const NormSpec& norm, int k, int l);
};

// ---------------------------------------------------------------------------
// Kept collections
// ---------------------------------------------------------------------------

/// One kept ball: radius upsilon_tilde(shell), centre on a shell plane.
struct IndexedBall {
  Ball ball;
  int shell = 0;
  std::uint32_t plane_index = 0;  // position in the shell's plane listing
};

struct KgbOptions {
  /// Keep mining (beyond the measure target) until the sum of r(A)^k reaches
  /// this value; 0 disables the quota.
  double vk_quota = 0.0;
  /// Shells to scan past the first before reporting exhaustion.
  int max_extra_shells = 64;
  std::size_t max_balls = 5'000'000;
};

struct KgbResult {
  std::vector<IndexedBall> balls;
  std::vector<AffinePlane> planes;  // planes[i] hosts balls[i]
  double measure_sum = 0.0;         // sum of H^k(A)
  double measure_target = 0.0;      // H^k(B) / (4 * 15^k)
  double vk_sum = 0.0;              // sum of r(A)^k
  int first_shell = 0;
  int last_shell = 0;
};

/// Greedy kept-ball selection starting at shell `g_shell`: candidates are
/// lattice points along each shell plane inside the host ball, admitted when
/// their 3-scaled ball is disjoint from every admitted one, scanning deeper
/// shells until the measure target (and quota, if any) is reached.  Asserts
/// before returning: every 3A inside b, all 3A pairwise disjoint, and
/// measure_sum >= measure_target; raises property_error with the achieved
/// measure when the source is exhausted first.
KgbResult build_kgb(const MtpScene& scene, const EngineConstants& cons, const Ball& b,
                    int g_shell, const KgbOptions& opts = {});

// ---------------------------------------------------------------------------
// Plane packings
// ---------------------------------------------------------------------------

/// An arithmetic run of equal balls along a plane: member i has centre
/// start + i * step, i = 0..count-1.  Runs stay compressed at the deepest
/// tree level, where realizing ~10^7 members would be pointless; member()
/// reconstructs any single one.  u_start/step_len are the same run in scalar
/// tangent coordinates (relative to the host ball's centre on the plane);
/// deep-scale queries and checks use these scalars, which stay exact long
/// after start + i * step has fallen below the resolution of the absolute
/// coordinates.
struct RunPack {
  Vec start;
  Vec step;
  double u_start = 0.0;
  double step_len = 0.0;
  std::int64_t count = 0;
  double radius = 0.0;
  double mu_each = 0.0;  // mass per member, filled by build_cantor
  bool empty = false;    // the plane missed the inner half ball

  Ball member(std::int64_t i) const;
};

struct PackingResult {
  RunPack run;
  double upsilon = 0.0;           // member radius
  double separation = 0.0;        // enforced centre gap (6 * upsilon)
  double union_measure = 0.0;     // count * H^k(member)
  double lower_bound = 0.0;       // (1/6^k) * H^k(slab cap of the half ball)
  double upper_bound = 0.0;       // H^k(slab cap of the full ball)
  double cardinality_ratio = 0.0; // count / (r(A)/upsilon)^l
};

/// Packs radius-upsilon(shell) balls centred on `plane` inside half of `a`,
/// every centre pair more than 6 * upsilon apart (the same lattice scan as
/// geometry's separated_pack, but with the admissible index window solved in
/// closed form so giant runs cost O(1)).
/// Preconditions: 6 * upsilon(shell) < r(a), strictly (config_error
/// otherwise).  For a centred on the plane, asserts: centres on the plane and
/// in the half ball, 3-scaled members inside a and pairwise disjoint, the
/// measure sandwich lower_bound <= union_measure <= upper_bound, and the
/// cardinality window d1 <= cardinality_ratio <= d2.  A plane that misses the
/// half ball yields an empty flagged run.
PackingResult build_packing(const MtpScene& scene, const EngineConstants& cons,
                            const AffinePlane& plane, const Ball& a, int shell);

// ---------------------------------------------------------------------------
// Cantor tree
// ---------------------------------------------------------------------------

/// Bookkeeping of one refinement stage of a local level.
struct StageAudit {
  int stage = 1;                 // 1-based within the local level
  int g_shell = 0;               // first shell used by this stage
  int last_shell = 0;            // deepest shell used
  double upsilon = 0.0;          // envelope at g_shell
  double upsilon_tilde = 0.0;    // kept-ball radius at g_shell
  double vk_sum = 0.0;           // sum of r(A)^k over kept balls
  double vk_floor = 0.0;         // c3 * r(B)^k (the stage mass floor)
  double measure_sum = 0.0;      // kept-collection measure bookkeeping
  double measure_target = 0.0;
  double f_ratio = 0.0;          // f(upsilon) / f(previous stage's smallest child radius)
  double g_ratio = 0.0;          // same for g (both <= 1/2 from stage 2 on)
  double epsilon_achieved = 0.0; // max over used shells of (Y^k/f(Y)) * f(r(B))/r(B)^k
  double epsilon_target = 0.0;   // the fine-scale threshold for this ball (diagnostic)
  double leftover_fraction = 0.0;  // lower bound on surviving space / H(half B) (stages >= 2)
  double min_child_radius = 0.0;
  double max_child_radius = 0.0;
  std::size_t ball_count = 0;    // kept balls this stage
  std::size_t bprime_count = 0;  // interior cover balls used (stages >= 2)
  std::size_t bprime_family_count = 0;   // full disjoint interior cover family size
  double bprime_family_measure = 0.0;    // its total Lebesgue measure
};

/// One kept ball of a local level with its packed children.
struct KgbEntry {
  Ball a;
  AffinePlane plane;               // host plane, rebased at a.center (also the packing plane)
  int shell = 0;
  int stage = 1;
  std::uint32_t plane_index = 0;
  std::uint32_t bprime_index = kNoBprime;  // interior cover ball hosting a stage-2 entry
  double vk = 0.0;                 // r(a)^k
  PackingResult pack;
  std::size_t first_child = std::numeric_limits<std::size_t>::max();

  static constexpr std::uint32_t kNoBprime = 0xffffffffu;
};

/// The refinement of one construction ball: stages of kept balls finishing
/// with the packed runs that become the next level.
struct LocalLevel {
  double formula_sub_levels = 0.0;  // the mass-formula stage count for this ball
  int allowed_sub_levels = 1;       // after the engine's depth/feasibility caps
  int used_sub_levels = 1;
  std::string cap_reason;           // why allowed < formula (empty if not capped)
  double sum_vk = 0.0;              // denominator of the mass split
  std::vector<StageAudit> stages;
  std::vector<KgbEntry> entries;    // all kept balls, in build order
  std::vector<Ball> b_primes;       // interior cover balls of stages >= 2
};

struct CantorNode {
  Ball ball;
  int level = 1;                  // 1 = root
  int sub_level = 0;              // parent stage that produced this node
  int shell = 0;                  // member radius = upsilon(shell)
  std::uint32_t entry_index = 0;  // kept ball within the parent's local level
  std::int64_t member_index = 0;  // position within that entry's run
  double mu = 1.0;
  std::optional<LocalLevel> local;
  std::vector<CantorNode> children;
};

struct CantorOptions {
  double eta = 10.0;
  /// Ball levels of the tree.  Levels 1..max_depth-1 are realized as nodes
  /// carrying local levels; level max_depth exists as the compressed runs of
  /// the level max_depth-1 locals (counts and masses are exact; geometry is
  /// reconstructed per member on demand).
  int max_depth = 3;
  int max_sub_levels = 2;  // engine cap on stages per local level
  /// Predicted stage-2 kept-ball count above this caps the local level at one
  /// stage (the prediction c3 * r(B)^k / upsilon_tilde(G2)^k is exact a priori).
  double stage2_entry_budget = 4096.0;
  /// Demand the untruncated mass-formula stage count everywhere.  The counts
  /// grow like f(r)/(c3 r^k) (hundreds to millions even at the root), so this
  /// raises infeasibility_error explaining the required against feasible
  /// counts rather than building for years.
  bool full_sub_level_counts = false;
  std::size_t max_nodes = 2'000'000;
};

/// Raised when the requested construction provably exceeds what this machine
/// can build (e.g. demanding the untruncated stage counts).
class infeasibility_error : public std::runtime_error {
 public:
  infeasibility_error(const std::string& what, double requested, double feasible)
      : std::runtime_error(what), requested_(requested), feasible_(feasible) {}
  double requested() const { return requested_; }
  double feasible() const { return feasible_; }

 private:
  double requested_ = 0.0;
  double feasible_ = 0.0;
};

struct CantorTree {
  MtpScene scene;
  EngineConstants constants;
  CantorOptions options;
  Ball b0;
  CantorNode root;
  double r0 = 0.0;  // smallest level-2 ball radius
  std::vector<std::size_t> level_counts;  // balls per level (terminal runs included)
  std::vector<double> level_mu_sums;      // mass per level (each should be 1)

  std::string serialize() const;
  std::uint64_t hash() const;
};

/// Builds the tree: level 1 is {b0}; every realized ball gets a local level
/// (stage 1 from the kept collection of the whole ball, stage 2 from kept
/// collections over interior cover balls of the leftover space), children
/// carry mass mu(B) * (vk(A)/sum vk) / count.  All structural properties are
/// asserted during the build.
CantorTree build_cantor(const MtpScene& scene, const Ball& b0, const CantorOptions& opts);

/// Re-runs every storable structural check on a finished tree.  Property
/// names: root-level-exact, level-separation, stage-packing-separation,
/// stage-mass-floor, stage-scale-halving, stage-count-formula,
/// kept-ball-containment, kept-ball-separation, kept-collection-yield,
/// interior-cover-yield, leftover-space-floor, pack-centers-on-plane,
/// pack-ball-containment, pack-separation, pack-measure-sandwich,
/// pack-cardinality-window, mass-additivity, level-mass-sums.
struct PropertyReport {
  struct Item {
    std::string name;
    bool pass = true;
    std::size_t checks = 0;
    std::string detail;  // worst offender when failing
  };
  std::vector<Item> items;
  bool all_pass() const;
  std::string summary() const;
};
PropertyReport check_cantor_properties(const CantorTree& tree);

/// Upper cover approximation of the tree measure of a ball: the sum of
/// member masses at the deepest level over members whose balls meet d.
double mu_of_set(const CantorTree& tree, const Ball& d);

struct MeasureBoundReport {
  double max_node_ratio = 0.0;    // max of mu(L) * eta / f(r(L)) over levels >= 2
  double max_sample_ratio = 0.0;  // same over random test balls
  std::size_t samples = 0;
  std::size_t nonzero_samples = 0;
  double r0 = 0.0;
};

/// (a) Scans every construction ball at levels >= 2 for the ratio
/// mu(L) * eta / f(r(L)); (b) samples random balls D, radii log-uniform in
/// [r0/100, r0): half with centres uniform in b0, half anchored near members
/// of the terminal runs so the mass actually gets probed, and reports the
/// max of mu_of_set(D) * eta / f(r(D)).
MeasureBoundReport verify_cantor_measure_bound(const CantorTree& tree, std::size_t samples,
                                               std::uint64_t seed);

// ---------------------------------------------------------------------------
// Hypothesis and lemma checks
// ---------------------------------------------------------------------------

/// Fraction of a point grid of b lying within upsilon_tilde(j) of some shell-j
/// plane for some j in [g, g + span], reported for each g in [g_lo, g_hi]:
/// the full-measure hypothesis of the transference theorem says these
/// fractions stay near 1 as g grows.
struct CoverageRow {
  int g = 0;
  double fraction = 0.0;
};
std::vector<CoverageRow> check_full_measure(const MtpScene& scene, const Ball& b, int g_lo,
                                            int g_hi, int span, int grid_per_axis);

/// Separation predicate for ball pairs: when a meets m, a is not swallowed by
/// the c-scaled m, and c >= 3, then r(m) <= r(a) and the c-scaled m lies in
/// the 5-scaled a.  Exact scalar checks; `hypotheses` reports whether the
/// instance satisfies the premises at all.
struct SeparationCheck {
  bool hypotheses = false;
  bool radius_ok = false;
  bool containment_ok = false;
};
SeparationCheck check_ball_separation(const Ball& a, const Ball& m, double c,
                                      const NormSpec& norm);

}  // namespace linforms
