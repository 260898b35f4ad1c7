// linforms — experiment configuration: textual function specs, the key/value
// config format every command consumes and echoes, and the versioned CSV
// writer used for all tabular outputs.
//
// The config text is flat UTF-8 `section.key = value` lines ('#' comments).
// Parsing is strict: unknown keys and malformed values raise config_error
// naming the line.  serialize() emits every field in a fixed order with all
// defaults explicit, so a config round-trips byte-identically through
// parse -> serialize and two runs of the same config are comparable.
// SPDX-License-Identifier: MIT
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "linforms/dimfun.hpp"
#include "linforms/diophantine.hpp"
#include "linforms/estimator.hpp"

namespace linforms {

/// Shortest decimal form of v that parses back to exactly the same double
/// (std::to_chars); the one number format used across configs and CSVs.
std::string format_double(double v);

/// Parses the result of format_double (and plain decimal/hex literals).
double parse_double(const std::string& text);

/// Approximating-function spec strings:
///   "powerlaw c=<real> tau=<real>"      psi(q) = c * q^-tau
///   "table q1:v1,q2:v2,..."             step-interpolated table
///   "zero"
ApproxFunction parse_psi_spec(const std::string& spec);

/// Canonical spec of a parseable psi (power law, table, zero); the derived
/// variants (clamped, transformed) have no textual form and raise
/// config_error.
std::string format_psi_spec(const ApproxFunction& psi);

/// Dimension-function spec: "dimfun c=<real> s=<real> a=<real>" for
/// f(r) = c * r^s * (log 1/r)^a (a defaults to 0).
DimensionFunction parse_dimfun_spec(const std::string& spec);
std::string format_dimfun_spec(const DimensionFunction& f);

/// Everything one experiment needs.  One config = one run; commands read
/// the sections they use and ignore none (unknown keys are errors).
struct ExperimentConfig {
  std::string command = "predict";

  // scene
  int n = 1;
  int m = 1;
  std::string psi_spec = "powerlaw c=1 tau=1";
  std::vector<double> y;                   // empty = zero shift
  std::vector<std::vector<double>> phi;    // empty = identity inhomogeneity matrix
  std::vector<int> partition;              // empty = no primitivity restriction
  std::vector<double> x;                   // probe point (witnesses)

  // transfer pair
  std::string f_spec = "dimfun c=1 s=1 a=0";
  int pair_m = 0;   // 0 = scene m (engine_pair with a dyadic source: 1)
  int pair_l = -1;  // -1 = scene m(n-1) (engine_pair with a dyadic source: ambient-1)

  // truncations
  int q = 100;
  int g = 1;
  int j_max = 10;

  // estimator
  std::int64_t samples = 1000;
  std::uint64_t seed = 1;
  int grid = 64;
  int threads = 1;
  std::string schedule;                    // "Q:delta,Q:delta,..."
  std::string width_mode = "truncation";   // or "per-denominator"

  // engine
  std::string source = "dyadic";           // or "diophantine"
  int ambient = 1;                         // dyadic source dimension (1 or 2)
  int span = 8;                            // dyadic span exponent
  double eta = 10.0;
  int depth = 3;
  int sub_levels = 2;
  double entry_budget = 4096.0;
  std::vector<double> b0_center;           // empty = source default
  double b0_radius = 0.0;                  // 0 = source default
  std::vector<double> omega_center;
  double omega_radius = 0.0;
  double m_bound = 0.0;                    // 0 = compute_M from the scene

  std::string out_dir = ".";

  static ExperimentConfig parse(const std::string& text);
  static ExperimentConfig load(const std::string& path);

  /// Canonical text: fixed key order, every default explicit.
  std::string serialize() const;

  /// The typed Diophantine scene (psi, y, Phi, partition validated).
  SceneConfig scene() const;

  /// The transfer pair from f_spec resolved against the approximation scene:
  /// pair_m = 0 means the scene's m, pair_l = -1 means m(n-1).
  TransferPair pair() const;

  /// The transfer pair resolved against the construction ambient: with the
  /// dyadic source, pair_m = 0 means 1 and pair_l = -1 means ambient-1;
  /// with the diophantine source this equals pair().
  TransferPair engine_pair() const;

  std::vector<ScheduleEntry> parsed_schedule() const;
};

/// Tabular output with the versioned header comment every CSV carries.
struct CsvTable {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  void add_row(std::vector<std::string> cells);
  /// "# linforms-csv v1\n" + comma-joined header + rows.
  std::string to_text() const;
};

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace linforms
