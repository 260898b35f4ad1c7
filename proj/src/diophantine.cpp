// linforms — Diophantine scene implementation.
// SPDX-License-Identifier: MIT
#include "linforms/diophantine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace linforms {

// ---------------------------------------------------------------------------
// Partition
// ---------------------------------------------------------------------------

Partition Partition::trivial(int n) {
  if (n < 1) throw config_error("partition: n must be >= 1");
  Partition p;
  p.block_of.assign(n, 0);
  return p;
}

Partition Partition::from_blocks(std::vector<int> block_of) {
  if (block_of.empty()) throw config_error("partition: empty index set");
  const int b = *std::max_element(block_of.begin(), block_of.end()) + 1;
  std::vector<int> count(b, 0);
  for (int lbl : block_of) {
    if (lbl < 0) throw config_error("partition: block labels must be non-negative");
    ++count[lbl];
  }
  for (int c : count) {
    if (c == 0) throw config_error("partition: block labels must be contiguous from 0");
  }
  Partition p;
  p.block_of = std::move(block_of);
  return p;
}

int Partition::blocks() const {
  return block_of.empty() ? 0 : *std::max_element(block_of.begin(), block_of.end()) + 1;
}

bool is_primitive(const Eigen::VectorXi& q, const Partition& partition) {
  if (q.size() != partition.size()) throw config_error("primitivity: q length must match partition");
  std::vector<long long> g(partition.blocks(), 0);
  for (int i = 0; i < q.size(); ++i) {
    g[partition.block_of[i]] = std::gcd(g[partition.block_of[i]], static_cast<long long>(std::abs(q(i))));
  }
  return std::all_of(g.begin(), g.end(), [](long long v) { return v == 1; });
}

// ---------------------------------------------------------------------------
// SceneConfig
// ---------------------------------------------------------------------------

SceneConfig SceneConfig::make(int n, int m, ApproxFunction psi) {
  return make(n, m, std::move(psi), Eigen::MatrixXd::Identity(m, m), Vec::Zero(m), std::nullopt);
}

SceneConfig SceneConfig::make(int n, int m, ApproxFunction psi, Eigen::MatrixXd Phi, Vec y,
                              std::optional<Partition> partition) {
  if (n < 1 || m < 1) throw config_error("scene: n and m must be >= 1");
  if (Phi.rows() != m || Phi.cols() != m) throw config_error("scene: Phi must be m x m");
  if (y.size() != m) throw config_error("scene: y must have length m");
  if (partition && partition->size() != n) {
    throw config_error("scene: partition must cover exactly the n denominator coordinates");
  }
  SceneConfig s;
  s.n = n;
  s.m = m;
  s.psi = std::move(psi);
  s.Phi = std::move(Phi);
  s.y = std::move(y);
  s.partition = std::move(partition);
  return s;
}

ResonantPlane SceneConfig::plane(const Eigen::VectorXi& q, const Eigen::VectorXi& p) const {
  return ResonantPlane::make(q, p, y, Phi);
}

// ---------------------------------------------------------------------------
// Height constant
// ---------------------------------------------------------------------------

double compute_M(const TransferPair& pair, const ApproxFunction& psi, int n,
                 double base_factor, double sup_factor) {
  if (n < 1) throw config_error("height constant: n must be >= 1");
  // sup over r >= 1 of g(min(ψ(r),1)/r)^{1/m}; the argument is <= 1 and the
  // candidates below bracket every monotone regime of the closed family.
  double sup = 0.0;
  for (int j = 0; j <= 480; ++j) {
    const double r = std::pow(2.0, j / 8.0);
    const double v = std::min(psi(r), 1.0);
    if (v <= 0.0) continue;
    sup = std::max(sup, big_theta_transform(pair, v, r) / r);
  }
  return std::max(base_factor * n, (sup_factor / std::sqrt(static_cast<double>(n))) * sup);
}

// ---------------------------------------------------------------------------
// Enumeration
// ---------------------------------------------------------------------------

namespace {

bool lex_less(const Eigen::VectorXi& a, const Eigen::VectorXi& b) {
  for (int i = 0; i < a.size(); ++i) {
    if (a(i) != b(i)) return a(i) < b(i);
  }
  return false;
}

/// All integer vectors of length n with sup-norm in [1, Q], ordered by
/// sup-norm then lexicographically; primitive when a partition is given.
std::vector<Eigen::VectorXi> admissible_denominators(const SceneConfig& scene, int Q, int G) {
  std::vector<Eigen::VectorXi> out;
  Eigen::VectorXi q(scene.n);
  // Recursive box walk in lex order.
  auto walk = [&](auto&& self, int pos) -> void {
    if (pos == scene.n) {
      const int sup = q.cwiseAbs().maxCoeff();
      if (sup < G || sup > Q) return;
      if (scene.partition && !is_primitive(q, *scene.partition)) return;
      out.push_back(q);
      return;
    }
    for (int v = -Q; v <= Q; ++v) {
      q(pos) = v;
      self(self, pos + 1);
    }
  };
  walk(walk, 0);
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) {
    const int sa = a.cwiseAbs().maxCoeff(), sb = b.cwiseAbs().maxCoeff();
    if (sa != sb) return sa < sb;
    return lex_less(a, b);
  });
  return out;
}

}  // namespace

std::vector<QPPair> enumerate_pairs(const SceneConfig& scene, int Q, double M) {
  if (Q < 1) throw config_error("enumeration: Q must be >= 1");
  if (!(M >= 0.0)) throw config_error("enumeration: M must be >= 0");

  // Numerator box: |p·Phi|_sup <= M|q|_sup.  With invertible Phi,
  // |p|_sup <= |p·Phi|_sup * maxColSum(|Phi^{-1}|); otherwise fall back to
  // the direct box |p|_sup <= M|q|_sup.
  double box_scale = 1.0;
  Eigen::FullPivLU<Eigen::MatrixXd> lu(scene.Phi);
  const bool invertible = lu.isInvertible();
  if (invertible) {
    box_scale = lu.inverse().cwiseAbs().colwise().sum().maxCoeff();
  }

  std::vector<QPPair> out;
  for (const Eigen::VectorXi& q : admissible_denominators(scene, Q, 1)) {
    const double qs = q.cwiseAbs().maxCoeff();
    const double limit = M * qs;
    const auto bound = static_cast<long long>(std::floor(limit * (invertible ? box_scale : 1.0) + 1e-9));
    Eigen::VectorXi p(scene.m);
    auto walk = [&](auto&& self, int pos) -> void {
      if (pos == scene.m) {
        const double reach = (p.cast<double>().transpose() * scene.Phi).cwiseAbs().maxCoeff();
        if (reach <= limit * (1.0 + 1e-12) + 1e-12) out.push_back(QPPair{q, p});
        return;
      }
      for (long long v = -bound; v <= bound; ++v) {
        p(pos) = static_cast<int>(v);
        self(self, pos + 1);
      }
    };
    walk(walk, 0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Witnesses
// ---------------------------------------------------------------------------

namespace {

/// Best integer numerator for a fixed q: minimizes |q·X + p·Phi - y|_sup.
/// Exact for identity (and zero) Phi; otherwise searches the +-1 box around
/// the rounded real solution.
std::pair<Eigen::VectorXi, double> best_numerator(const SceneConfig& scene, const Vec& v) {
  const int m = scene.m;
  Eigen::VectorXi best = Eigen::VectorXi::Zero(m);
  if (scene.Phi.isZero(0.0)) {
    return {best, v.cwiseAbs().maxCoeff()};  // p cannot move anything
  }
  if (scene.Phi.isIdentity(1e-15)) {
    Eigen::VectorXi p(m);
    double err = 0.0;
    for (int l = 0; l < m; ++l) {
      p(l) = static_cast<int>(std::lround(-v(l)));
      err = std::max(err, std::fabs(v(l) + p(l)));
    }
    return {p, err};
  }
  // p·Phi ≈ -v  =>  Phi^T p^T ≈ -v.
  Vec p_real = scene.Phi.transpose().fullPivLu().solve(-v);
  Eigen::VectorXi p0(m);
  for (int l = 0; l < m; ++l) p0(l) = static_cast<int>(std::lround(p_real(l)));
  double best_err = std::numeric_limits<double>::infinity();
  Eigen::VectorXi off = Eigen::VectorXi::Constant(m, -1);
  while (true) {
    Eigen::VectorXi p = p0 + off;
    const double err = (v + (p.cast<double>().transpose() * scene.Phi).transpose()).cwiseAbs().maxCoeff();
    if (err < best_err) {
      best_err = err;
      best = p;
    }
    int d = m - 1;
    while (d >= 0 && ++off(d) > 1) {
      off(d) = -1;
      --d;
    }
    if (d < 0) break;
  }
  return {best, best_err};
}

Vec forms_minus_shift(const SceneConfig& scene, const Eigen::VectorXi& q, const Vec& x) {
  Vec v(scene.m);
  const Vec qd = q.cast<double>();
  for (int l = 0; l < scene.m; ++l) {
    v(l) = qd.dot(x.segment(static_cast<Eigen::Index>(l) * scene.n, scene.n)) - scene.y(l);
  }
  return v;  // q·X_l - y_l; a witness needs |v + p·Phi|_sup < ψ
}

}  // namespace

std::vector<Witness> approx_witnesses(const SceneConfig& scene, const Vec& x, int Q, int G) {
  if (G < 1 || Q < G) throw config_error("witnesses: need 1 <= G <= Q");
  if (x.size() != static_cast<Eigen::Index>(scene.n) * scene.m) {
    throw config_error("witnesses: point length must be n*m");
  }
  std::vector<Witness> out;
  for (const Eigen::VectorXi& q : admissible_denominators(scene, Q, G)) {
    const double psi_q = scene.psi(q.cwiseAbs().maxCoeff());
    if (!(psi_q > 0.0)) continue;
    auto [p, err] = best_numerator(scene, forms_minus_shift(scene, q, x));
    if (err < psi_q) out.push_back(Witness{q, p, err});
  }
  return out;
}

bool has_witness(const SceneConfig& scene, const Vec& x, int Q, int G) {
  if (G < 1 || Q < G) throw config_error("witnesses: need 1 <= G <= Q");
  for (const Eigen::VectorXi& q : admissible_denominators(scene, Q, G)) {
    const double psi_q = scene.psi(q.cwiseAbs().maxCoeff());
    if (!(psi_q > 0.0)) continue;
    auto [p, err] = best_numerator(scene, forms_minus_shift(scene, q, x));
    if (err < psi_q) return true;
  }
  return false;
}

}  // namespace linforms
