// linforms — experiment runner CLI.
//
// One config file = one experiment = one report plus plot-ready CSV files.
// Exit codes: 0 all asserted properties pass, 1 a named property failed,
// 2 the config (or command line) is invalid.
// SPDX-License-Identifier: MIT
#include <chrono>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "linforms/config.hpp"
#include "linforms/dimfun.hpp"
#include "linforms/diophantine.hpp"
#include "linforms/engine.hpp"
#include "linforms/estimator.hpp"
#include "linforms/geometry.hpp"

namespace lf = linforms;

namespace {

constexpr const char* kVersion = "linforms 1.0.0";

std::string fmt(double v) { return lf::format_double(v); }

std::string sanitize_cell(std::string s) {
  for (char& ch : s)
    if (ch == ',' || ch == '\n') ch = ';';
  return s;
}

std::string verdict_name(lf::SeriesVerdict v) {
  return v == lf::SeriesVerdict::Convergent ? "Convergent" : "Divergent";
}

std::string monotonicity_name(lf::Monotonicity m) {
  switch (m) {
    case lf::Monotonicity::NonDecreasing: return "non-decreasing";
    case lf::Monotonicity::NonIncreasing: return "non-increasing";
    case lf::Monotonicity::Constant: return "constant";
    default: return "mixed";
  }
}

std::string limit_name(lf::LimitAtZero l) {
  switch (l) {
    case lf::LimitAtZero::Zero: return "zero";
    case lf::LimitAtZero::Positive: return "positive";
    default: return "infinite";
  }
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

lf::Vec vec_of(const std::vector<double>& v, int dim, const std::string& what) {
  lf::Vec out = lf::Vec::Zero(dim);
  if (v.empty()) return out;
  if (static_cast<int>(v.size()) != dim)
    throw lf::config_error("config: " + what + " needs " + std::to_string(dim) +
                           " coordinates, got " + std::to_string(v.size()));
  for (int i = 0; i < dim; ++i) out(i) = v[static_cast<std::size_t>(i)];
  return out;
}

/// Everything a run produces besides CSV files.  CSV bytes depend only on
/// (config, seed); wall time lives in the report alone.
struct RunContext {
  const lf::ExperimentConfig& cfg;
  std::ostringstream results;
  std::vector<std::string> failed;  // named failed properties

  explicit RunContext(const lf::ExperimentConfig& c) : cfg(c) {}

  void line(const std::string& key, const std::string& value) {
    results << key << " = " << value << '\n';
  }
  void csv(const std::string& name, const lf::CsvTable& table) const {
    lf::write_text_file((std::filesystem::path(cfg.out_dir) / name).string(), table.to_text());
  }
};

// ---------------------------------------------------------------------------
// subcommands
// ---------------------------------------------------------------------------

void run_predict(RunContext& rc) {
  const lf::ApproxFunction psi = lf::parse_psi_spec(rc.cfg.psi_spec);
  const lf::PowerLawPsi* p = psi.as_power_law();
  if (!p)
    throw lf::config_error("config: predict needs a power-law psi (scene.psi = powerlaw ...)");
  const double dim = lf::predict_dimension(rc.cfg.n, rc.cfg.m, p->tau);
  const bool saturated =
      p->tau * rc.cfg.m <= static_cast<double>(rc.cfg.n);
  rc.line("predicted_dimension", fmt(dim));
  rc.line("saturated", saturated ? "1" : "0");
  lf::CsvTable t;
  t.columns = {"n", "m", "tau", "dimension"};
  t.add_row({std::to_string(rc.cfg.n), std::to_string(rc.cfg.m), fmt(p->tau), fmt(dim)});
  rc.csv("predict.csv", t);
}

void classify_into(RunContext& rc, lf::CsvTable& t) {
  const lf::ApproxFunction psi = lf::parse_psi_spec(rc.cfg.psi_spec);
  const lf::TransferPair pair = rc.cfg.pair();
  const lf::SeriesAnalysis leb = lf::classify_lebesgue_series(psi, rc.cfg.n, rc.cfg.m);
  const lf::SeriesAnalysis hau = lf::classify_hausdorff_series(pair, psi, rc.cfg.n, rc.cfg.m);
  auto row = [&t](const std::string& side, const lf::SeriesAnalysis& a) {
    t.add_row({side, verdict_name(a.verdict), fmt(a.term_exponent), fmt(a.term_log_exponent),
               a.boundary ? "1" : "0", sanitize_cell(a.method)});
  };
  t.columns = {"series", "verdict", "term_exponent", "term_log_exponent", "boundary", "method"};
  row("lebesgue", leb);
  row("hausdorff", hau);
  rc.line("lebesgue_verdict", verdict_name(leb.verdict));
  rc.line("hausdorff_verdict", verdict_name(hau.verdict));
}

void run_classify(RunContext& rc) {
  lf::CsvTable t;
  classify_into(rc, t);
  rc.csv("classify.csv", t);
}

void run_witnesses(RunContext& rc) {
  const lf::SceneConfig scene = rc.cfg.scene();
  const int dim = rc.cfg.n * rc.cfg.m;
  if (rc.cfg.x.empty())
    throw lf::config_error("config: witnesses needs scene.x (the probed point, " +
                           std::to_string(dim) + " coordinates)");
  const lf::Vec x = vec_of(rc.cfg.x, dim, "scene.x");
  const std::vector<lf::Witness> ws = lf::approx_witnesses(scene, x, rc.cfg.q, rc.cfg.g);
  lf::CsvTable t;
  for (int i = 1; i <= rc.cfg.n; ++i) t.columns.push_back("q" + std::to_string(i));
  for (int i = 1; i <= rc.cfg.m; ++i) t.columns.push_back("p" + std::to_string(i));
  t.columns.push_back("error");
  double best = std::numeric_limits<double>::infinity();
  for (const lf::Witness& w : ws) {
    std::vector<std::string> row;
    for (int i = 0; i < rc.cfg.n; ++i) row.push_back(std::to_string(w.q(i)));
    for (int i = 0; i < rc.cfg.m; ++i) row.push_back(std::to_string(w.p(i)));
    row.push_back(fmt(w.error));
    t.add_row(std::move(row));
    best = std::min(best, w.error);
  }
  rc.csv("witnesses.csv", t);
  rc.line("witness_count", std::to_string(ws.size()));
  rc.line("has_witness", ws.empty() ? "0" : "1");
  if (!ws.empty()) rc.line("min_error", fmt(best));
}

void run_measure(RunContext& rc) {
  const lf::SceneConfig scene = rc.cfg.scene();
  const lf::McResult res = lf::mc_measure(scene, rc.cfg.g, rc.cfg.q, rc.cfg.samples, rc.cfg.seed,
                                          rc.cfg.threads);
  const double tail = lf::mc_tail_bound(scene, rc.cfg.g, rc.cfg.q);
  lf::CsvTable t;
  t.columns = {"Q", "G", "samples", "hits", "fraction", "ci_half_width", "tail_bound"};
  t.add_row({std::to_string(rc.cfg.q), std::to_string(rc.cfg.g), std::to_string(res.samples),
             std::to_string(res.hits), fmt(res.fraction), fmt(res.ci_half_width), fmt(tail)});
  rc.csv("measure.csv", t);
  rc.line("fraction", fmt(res.fraction));
  rc.line("ci_half_width", fmt(res.ci_half_width));
  rc.line("tail_bound", fmt(tail));
}

void run_boxdim(RunContext& rc) {
  const lf::SceneConfig scene = rc.cfg.scene();
  const std::vector<lf::ScheduleEntry> schedule = rc.cfg.parsed_schedule();
  if (schedule.empty())
    throw lf::config_error("config: boxdim needs estimator.schedule (\"Q:delta,Q:delta,...\")");
  const lf::BoxWidthMode mode = rc.cfg.width_mode == "per-denominator"
                                    ? lf::BoxWidthMode::PerDenominatorWidth
                                    : lf::BoxWidthMode::TruncationWidth;
  const std::vector<lf::BoxCountRow> rows = lf::box_count_schedule(scene, schedule, mode);
  lf::CsvTable t;
  t.columns = {"Q", "delta", "boxes", "log_inv_delta", "log_boxes"};
  for (const lf::BoxCountRow& r : rows)
    t.add_row({std::to_string(r.Q), fmt(r.delta), std::to_string(r.boxes),
               fmt(std::log(1.0 / r.delta)), fmt(std::log(static_cast<double>(r.boxes)))});
  rc.csv("boxdim.csv", t);
  rc.line("box_dimension_slope", fmt(lf::fit_loglog_slope(rows)));
}

void run_transfer_check(RunContext& rc) {
  const lf::ApproxFunction psi = lf::parse_psi_spec(rc.cfg.psi_spec);
  const lf::TransferPair pair = rc.cfg.pair();
  const lf::ApproxFunction theta = lf::theta_transform(pair, psi);
  const int qcap = std::min(rc.cfg.q, 10000);
  lf::CsvTable t;
  t.columns = {"q", "psi", "theta", "big_theta", "abs_diff"};
  double max_diff = 0.0;
  for (int q = 1; q <= qcap; ++q) {
    const double qd = static_cast<double>(q);
    const double pv = psi(qd);
    const double tv = theta(qd);
    const double bv = lf::big_theta_transform(pair, pv, qd);
    max_diff = std::max(max_diff, std::abs(tv - pv));
    t.add_row({std::to_string(q), fmt(pv), fmt(tv), fmt(bv), fmt(std::abs(tv - pv))});
  }
  rc.csv("transfer.csv", t);
  rc.line("theta_max_abs_diff", fmt(max_diff));
  rc.line("theta_equals_psi", max_diff == 0.0 ? "1" : "0");
  rc.line("ratio_monotonicity", monotonicity_name(pair.ratio_monotonicity));
  rc.line("ratio_limit", limit_name(pair.ratio_limit));
  lf::CsvTable ct;
  classify_into(rc, ct);
  rc.csv("classify.csv", ct);
}

struct EngineInputs {
  lf::MtpScene scene;
  lf::Ball b0;
  lf::CantorOptions opts;
};

EngineInputs make_engine_inputs(const lf::ExperimentConfig& cfg) {
  const lf::TransferPair pair = cfg.engine_pair();
  std::shared_ptr<const lf::PlaneSource> source;
  int dim = 0;
  if (cfg.source == "dyadic") {
    source = std::make_shared<lf::DyadicSource>(cfg.ambient, cfg.span);
    dim = cfg.ambient;
  } else {
    const lf::SceneConfig sc = cfg.scene();
    const double M = cfg.m_bound > 0.0
                         ? cfg.m_bound
                         : lf::compute_M(pair, lf::parse_psi_spec(cfg.psi_spec), cfg.n);
    source = std::make_shared<lf::DiophantineSource>(sc, cfg.j_max, M);
    dim = cfg.n * cfg.m;
  }
  if (cfg.b0_radius <= 0.0)
    throw lf::config_error("config: engine.b0_radius must be positive for mtp commands");
  const lf::Ball b0(vec_of(cfg.b0_center, dim, "engine.b0_center"), cfg.b0_radius);
  lf::Ball omega;
  if (cfg.omega_radius > 0.0) {
    omega = lf::Ball(vec_of(cfg.omega_center, dim, "engine.omega_center"), cfg.omega_radius);
  } else {
    omega = lf::Ball(b0.center, 1.25 * b0.radius);
  }
  lf::MtpScene scene =
      lf::MtpScene::make(std::move(source), pair, lf::NormSpec::euclidean(), omega);
  lf::CantorOptions opts;
  opts.eta = cfg.eta;
  opts.max_depth = cfg.depth;
  opts.max_sub_levels = cfg.sub_levels;
  opts.stage2_entry_budget = cfg.entry_budget;
  return {std::move(scene), b0, opts};
}

void report_properties(RunContext& rc, const lf::PropertyReport& rep) {
  for (const lf::PropertyReport::Item& item : rep.items) {
    rc.line("property " + item.name,
            std::string(item.pass ? "pass" : "FAIL") + " (" + std::to_string(item.checks) +
                " checks)" + (item.pass || item.detail.empty() ? "" : " " + item.detail));
    if (!item.pass) rc.failed.push_back(item.name);
  }
}

void write_tree_outputs(RunContext& rc, const lf::CantorTree& tree,
                        const lf::PropertyReport& rep) {
  lf::write_text_file((std::filesystem::path(rc.cfg.out_dir) / "tree.txt").string(),
                      tree.serialize());
  lf::CsvTable props;
  props.columns = {"property", "pass", "checks", "detail"};
  for (const lf::PropertyReport::Item& item : rep.items)
    props.add_row({item.name, item.pass ? "1" : "0", std::to_string(item.checks),
                   sanitize_cell(item.detail)});
  rc.csv("properties.csv", props);
  lf::CsvTable levels;
  levels.columns = {"level", "count", "mu_sum"};
  for (std::size_t i = 0; i < tree.level_counts.size(); ++i)
    levels.add_row({std::to_string(i), std::to_string(tree.level_counts[i]),
                    fmt(i < tree.level_mu_sums.size() ? tree.level_mu_sums[i] : 0.0)});
  rc.csv("levels.csv", levels);
  rc.line("tree_hash", hash_hex(tree.hash()));
  rc.line("r0", fmt(tree.r0));
  for (std::size_t i = 1; i < tree.level_counts.size(); ++i)
    rc.line("level_" + std::to_string(i) + "_count", std::to_string(tree.level_counts[i]));
}

void run_mtp_build(RunContext& rc) {
  EngineInputs in = make_engine_inputs(rc.cfg);
  const lf::CantorTree tree = lf::build_cantor(in.scene, in.b0, in.opts);
  const lf::PropertyReport rep = lf::check_cantor_properties(tree);
  write_tree_outputs(rc, tree, rep);
  report_properties(rc, rep);
}

void run_mtp_verify(RunContext& rc) {
  EngineInputs in = make_engine_inputs(rc.cfg);
  const lf::CantorTree tree = lf::build_cantor(in.scene, in.b0, in.opts);
  const lf::PropertyReport rep = lf::check_cantor_properties(tree);
  write_tree_outputs(rc, tree, rep);
  report_properties(rc, rep);

  const std::size_t samples = static_cast<std::size_t>(std::max<std::int64_t>(rc.cfg.samples, 1));
  const lf::MeasureBoundReport mb = lf::verify_cantor_measure_bound(tree, samples, rc.cfg.seed);
  // probe through the unit-ball conjugation of b0 so f stays inside its
  // validity cap no matter the root radius (the MDP statement is scale-free
  // up to a constant, and only finiteness/stability is asserted)
  const double scale = tree.b0.radius;
  auto mu = [&tree, scale](const lf::Ball& d) {
    return lf::mu_of_set(
        tree, lf::Ball(tree.b0.center + (d.center - tree.b0.center) * scale, d.radius * scale));
  };
  const lf::MdpReport mdp =
      lf::verify_mdp_bound(mu, lf::Ball(tree.b0.center, 1.0), tree.scene.pair.f, samples,
                           rc.cfg.seed, tree.scene.norm);

  lf::CsvTable t;
  t.columns = {"max_node_ratio", "max_sample_ratio", "samples",      "nonzero_samples",
               "r0",             "mdp_max_ratio",    "mdp_mass",     "mdp_samples",
               "mdp_exponent"};
  t.add_row({fmt(mb.max_node_ratio), fmt(mb.max_sample_ratio), std::to_string(mb.samples),
             std::to_string(mb.nonzero_samples), fmt(mb.r0), fmt(mdp.max_ratio), fmt(mdp.mass),
             std::to_string(mdp.samples), fmt(mdp.exponent)});
  rc.csv("bound.csv", t);
  rc.line("max_node_ratio", fmt(mb.max_node_ratio));
  rc.line("max_sample_ratio", fmt(mb.max_sample_ratio));
  rc.line("nonzero_samples", std::to_string(mb.nonzero_samples));
  rc.line("mdp_max_ratio", fmt(mdp.max_ratio));
  rc.line("mdp_mass", fmt(mdp.mass));

  const bool finite = std::isfinite(mb.max_node_ratio) && std::isfinite(mb.max_sample_ratio) &&
                      std::isfinite(mdp.max_ratio) && mb.max_node_ratio > 0.0;
  rc.line("property measure-bound-finite", finite ? "pass" : "FAIL");
  if (!finite) rc.failed.push_back("measure-bound-finite");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"linforms: dimension prediction, series classification and Cantor-support "
               "construction for limsup sets of systems of linear forms"};
  app.fallthrough();
  app.set_version_flag("--version", std::string(kVersion));

  std::string config_path;
  std::uint64_t seed_override = 0;
  std::string out_override;
  int threads_override = 1;
  CLI::Option* config_opt = app.add_option("--config", config_path, "experiment config file");
  CLI::Option* seed_opt = app.add_option("--seed", seed_override, "override estimator.seed");
  CLI::Option* out_opt = app.add_option("--out", out_override, "override out.dir");
  CLI::Option* threads_opt =
      app.add_option("--threads", threads_override, "override estimator.threads");

  app.require_subcommand(1);
  struct Cmd {
    const char* name;
    const char* help;
    void (*fn)(RunContext&);
  };
  const std::vector<Cmd> cmds = {
      {"predict", "closed-form dimension of a power-law approximation scene", run_predict},
      {"classify", "convergence/divergence of the volume series (both forms)", run_classify},
      {"witnesses", "enumerate approximation witnesses at a point", run_witnesses},
      {"measure", "Monte-Carlo measure of the truncated scene union", run_measure},
      {"boxdim", "box-counting dimension estimate over a schedule", run_boxdim},
      {"transfer-check", "theta transform identity and two-sided classification",
       run_transfer_check},
      {"mtp-build", "build the Cantor support tree and check its properties", run_mtp_build},
      {"mtp-verify", "mtp-build plus measure-bound and mass-distribution checks",
       run_mtp_verify},
  };
  for (const Cmd& c : cmds) app.add_subcommand(c.name, c.help);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    lf::ExperimentConfig cfg =
        config_opt->count() ? lf::ExperimentConfig::load(config_path) : lf::ExperimentConfig{};
    const Cmd* chosen = nullptr;
    for (const Cmd& c : cmds)
      if (app.got_subcommand(c.name)) chosen = &c;
    cfg.command = chosen->name;
    if (seed_opt->count()) cfg.seed = seed_override;
    if (out_opt->count()) cfg.out_dir = out_override;
    if (threads_opt->count()) cfg.threads = threads_override;
    std::filesystem::create_directories(cfg.out_dir);

    RunContext rc(cfg);
    const auto t0 = std::chrono::steady_clock::now();
    chosen->fn(rc);
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::ostringstream report;
    report << "linforms report v1\n";
    report << "version = " << kVersion << '\n';
    report << "status = " << (rc.failed.empty() ? "ok" : "property-failure") << '\n';
    report << "wall_time_seconds = " << fmt(wall) << '\n';
    report << "--- config ---\n" << cfg.serialize();
    report << "--- results ---\n" << rc.results.str();
    lf::write_text_file((std::filesystem::path(cfg.out_dir) / "report.txt").string(),
                        report.str());
    std::cout << report.str();

    if (!rc.failed.empty()) {
      std::cerr << "property failure: " << rc.failed.front() << '\n';
      return 1;
    }
    return 0;
  } catch (const lf::property_error& e) {
    std::cerr << "property failure: " << e.property() << ": " << e.what() << '\n';
    return 1;
  } catch (const lf::infeasibility_error& e) {
    std::cerr << "infeasible configuration: " << e.what()
              << " (requested " << e.requested() << ", feasible " << e.feasible() << ")\n";
    return 2;
  } catch (const lf::config_error& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  }
}
