// linforms — config text parsing/serialization, function spec strings, and
// the versioned CSV writer.
// SPDX-License-Identifier: MIT
#include "linforms/config.hpp"

#include <charconv>
#include <fstream>
#include <map>
#include <sstream>
#include <system_error>

namespace linforms {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : s) {
    if (ch == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

long long parse_int(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  long long v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw config_error(what + ": expected an integer, got '" + text + "'");
  return v;
}

std::uint64_t parse_u64(const std::string& text, const std::string& what) {
  const std::string t = trim(text);
  std::uint64_t v = 0;
  const auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc() || p != t.data() + t.size())
    throw config_error(what + ": expected an unsigned integer, got '" + text + "'");
  return v;
}

std::vector<double> parse_vector(const std::string& text, const std::string& what) {
  std::vector<double> out;
  const std::string t = trim(text);
  if (t.empty()) return out;
  for (const std::string& cell : split(t, ',')) {
    try {
      out.push_back(parse_double(trim(cell)));
    } catch (const config_error&) {
      throw config_error(what + ": expected comma-separated reals, got '" + text + "'");
    }
  }
  return out;
}

std::string format_vector(const std::vector<double>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out.push_back(',');
    out += format_double(v[i]);
  }
  return out;
}

/// "name k=v k=v" -> (name, ordered key set), validating against `allowed`.
std::map<std::string, double> parse_kv_tail(const std::vector<std::string>& words,
                                            const std::string& what,
                                            const std::vector<std::string>& allowed) {
  std::map<std::string, double> kv;
  for (std::size_t i = 1; i < words.size(); ++i) {
    const auto eq = words[i].find('=');
    if (eq == std::string::npos)
      throw config_error(what + ": expected key=value, got '" + words[i] + "'");
    const std::string key = words[i].substr(0, eq);
    bool ok = false;
    for (const std::string& a : allowed) ok = ok || a == key;
    if (!ok) throw config_error(what + ": unknown key '" + key + "'");
    if (kv.count(key)) throw config_error(what + ": duplicate key '" + key + "'");
    kv[key] = parse_double(words[i].substr(eq + 1));
  }
  return kv;
}

std::vector<std::string> words_of(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string w;
  while (is >> w) out.push_back(w);
  return out;
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  const auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc()) throw config_error("format_double: value not representable");
  return std::string(buf, p);
}

double parse_double(const std::string& text) {
  const std::string t = trim(text);
  if (t.empty()) throw config_error("expected a real number, got an empty string");
  double v = 0.0;
  auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec == std::errc() && p == t.data() + t.size()) return v;
  // hex floats (0x1.8p-3) fall back to strtod
  try {
    std::size_t pos = 0;
    v = std::stod(t, &pos);
    if (pos == t.size()) return v;
  } catch (const std::exception&) {
  }
  throw config_error("expected a real number, got '" + text + "'");
}

ApproxFunction parse_psi_spec(const std::string& spec) {
  const std::vector<std::string> words = words_of(trim(spec));
  if (words.empty()) throw config_error("psi spec: empty");
  const std::string& name = words[0];
  if (name == "zero") {
    if (words.size() != 1) throw config_error("psi spec: 'zero' takes no parameters");
    return ApproxFunction::zero();
  }
  if (name == "powerlaw") {
    auto kv = parse_kv_tail(words, "psi spec", {"c", "tau"});
    const double c = kv.count("c") ? kv["c"] : 1.0;
    if (!kv.count("tau")) throw config_error("psi spec: powerlaw needs tau=<real>");
    return ApproxFunction::power_law(c, kv["tau"]);
  }
  if (name == "table") {
    if (words.size() != 2) throw config_error("psi spec: table needs one q1:v1,q2:v2,... list");
    std::vector<std::pair<double, double>> rows;
    for (const std::string& cell : split(words[1], ',')) {
      const auto colon = cell.find(':');
      if (colon == std::string::npos)
        throw config_error("psi spec: table entries are q:value, got '" + cell + "'");
      rows.emplace_back(parse_double(cell.substr(0, colon)), parse_double(cell.substr(colon + 1)));
    }
    return ApproxFunction::table(std::move(rows));
  }
  throw config_error("psi spec: unknown function '" + name +
                     "' (supported: powerlaw, table, zero)");
}

std::string format_psi_spec(const ApproxFunction& psi) {
  if (psi.is_zero()) return "zero";
  if (const PowerLawPsi* p = psi.as_power_law())
    return "powerlaw c=" + format_double(p->coeff) + " tau=" + format_double(p->tau);
  if (const TablePsi* t = psi.as_table()) {
    std::string out = "table ";
    for (std::size_t i = 0; i < t->rows.size(); ++i) {
      if (i) out.push_back(',');
      out += format_double(t->rows[i].first) + ":" + format_double(t->rows[i].second);
    }
    return out;
  }
  throw config_error("psi spec: derived functions (clamped, transformed) have no textual form");
}

DimensionFunction parse_dimfun_spec(const std::string& spec) {
  const std::vector<std::string> words = words_of(trim(spec));
  if (words.empty() || words[0] != "dimfun")
    throw config_error("dimension function spec: expected 'dimfun c=<real> s=<real> a=<real>'");
  auto kv = parse_kv_tail(words, "dimension function spec", {"c", "s", "a"});
  if (!kv.count("s")) throw config_error("dimension function spec: needs s=<real>");
  const double c = kv.count("c") ? kv["c"] : 1.0;
  const double a = kv.count("a") ? kv["a"] : 0.0;
  return DimensionFunction::power_law(c, kv["s"], a);
}

std::string format_dimfun_spec(const DimensionFunction& f) {
  return "dimfun c=" + format_double(f.coeff) + " s=" + format_double(f.power) +
         " a=" + format_double(f.log_power);
}

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

ExperimentConfig ExperimentConfig::parse(const std::string& text) {
  ExperimentConfig c;
  std::istringstream is(text);
  std::string line;
  int line_no = 0;
  auto fail = [&line_no](const std::string& msg) {
    throw config_error("config line " + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string val = trim(t.substr(eq + 1));
    try {
      if (key == "command") c.command = val;
      else if (key == "scene.n") c.n = static_cast<int>(parse_int(val, key));
      else if (key == "scene.m") c.m = static_cast<int>(parse_int(val, key));
      else if (key == "scene.psi") c.psi_spec = format_psi_spec(parse_psi_spec(val));
      else if (key == "scene.y") c.y = parse_vector(val, key);
      else if (key == "scene.phi") {
        c.phi.clear();
        if (!val.empty() && val != "identity")
          for (const std::string& row : split(val, ';')) c.phi.push_back(parse_vector(row, key));
      } else if (key == "scene.partition") {
        c.partition.clear();
        if (!val.empty() && val != "none")
          for (const std::string& cell : split(val, ','))
            c.partition.push_back(static_cast<int>(parse_int(cell, key)));
      } else if (key == "scene.x") c.x = parse_vector(val, key);
      else if (key == "pair.f") c.f_spec = format_dimfun_spec(parse_dimfun_spec(val));
      else if (key == "pair.m") c.pair_m = static_cast<int>(parse_int(val, key));
      else if (key == "pair.l") c.pair_l = static_cast<int>(parse_int(val, key));
      else if (key == "truncation.q") c.q = static_cast<int>(parse_int(val, key));
      else if (key == "truncation.g") c.g = static_cast<int>(parse_int(val, key));
      else if (key == "truncation.jmax") c.j_max = static_cast<int>(parse_int(val, key));
      else if (key == "estimator.samples") c.samples = parse_int(val, key);
      else if (key == "estimator.seed") c.seed = parse_u64(val, key);
      else if (key == "estimator.grid") c.grid = static_cast<int>(parse_int(val, key));
      else if (key == "estimator.threads") c.threads = static_cast<int>(parse_int(val, key));
      else if (key == "estimator.schedule") c.schedule = val;
      else if (key == "estimator.width_mode") c.width_mode = val;
      else if (key == "engine.source") c.source = val;
      else if (key == "engine.ambient") c.ambient = static_cast<int>(parse_int(val, key));
      else if (key == "engine.span") c.span = static_cast<int>(parse_int(val, key));
      else if (key == "engine.eta") c.eta = parse_double(val);
      else if (key == "engine.depth") c.depth = static_cast<int>(parse_int(val, key));
      else if (key == "engine.sub_levels") c.sub_levels = static_cast<int>(parse_int(val, key));
      else if (key == "engine.entry_budget") c.entry_budget = parse_double(val);
      else if (key == "engine.b0_center") c.b0_center = parse_vector(val, key);
      else if (key == "engine.b0_radius") c.b0_radius = parse_double(val);
      else if (key == "engine.omega_center") c.omega_center = parse_vector(val, key);
      else if (key == "engine.omega_radius") c.omega_radius = parse_double(val);
      else if (key == "engine.m_bound") c.m_bound = parse_double(val);
      else if (key == "out.dir") c.out_dir = val;
      else fail("unknown key '" + key + "'");
    } catch (const config_error& e) {
      // re-raise with the line number if the value parser did not add it
      const std::string w = e.what();
      if (w.rfind("config line", 0) == 0) throw;
      fail(w);
    }
  }
  if (c.width_mode != "truncation" && c.width_mode != "per-denominator")
    throw config_error("config: estimator.width_mode must be 'truncation' or 'per-denominator'");
  if (c.source != "dyadic" && c.source != "diophantine")
    throw config_error("config: engine.source must be 'dyadic' or 'diophantine'");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  return parse(read_text_file(path));
}

std::string ExperimentConfig::serialize() const {
  std::ostringstream os;
  os << "command = " << command << '\n';
  os << "scene.n = " << n << '\n';
  os << "scene.m = " << m << '\n';
  os << "scene.psi = " << psi_spec << '\n';
  os << "scene.y = " << format_vector(y) << '\n';
  os << "scene.phi = ";
  if (phi.empty()) {
    os << "identity";
  } else {
    for (std::size_t i = 0; i < phi.size(); ++i) {
      if (i) os << ';';
      os << format_vector(phi[i]);
    }
  }
  os << '\n';
  os << "scene.partition = ";
  if (partition.empty()) {
    os << "none";
  } else {
    for (std::size_t i = 0; i < partition.size(); ++i) {
      if (i) os << ',';
      os << partition[i];
    }
  }
  os << '\n';
  os << "scene.x = " << format_vector(x) << '\n';
  os << "pair.f = " << f_spec << '\n';
  os << "pair.m = " << pair_m << '\n';
  os << "pair.l = " << pair_l << '\n';
  os << "truncation.q = " << q << '\n';
  os << "truncation.g = " << g << '\n';
  os << "truncation.jmax = " << j_max << '\n';
  os << "estimator.samples = " << samples << '\n';
  os << "estimator.seed = " << seed << '\n';
  os << "estimator.grid = " << grid << '\n';
  os << "estimator.threads = " << threads << '\n';
  os << "estimator.schedule = " << schedule << '\n';
  os << "estimator.width_mode = " << width_mode << '\n';
  os << "engine.source = " << source << '\n';
  os << "engine.ambient = " << ambient << '\n';
  os << "engine.span = " << span << '\n';
  os << "engine.eta = " << format_double(eta) << '\n';
  os << "engine.depth = " << depth << '\n';
  os << "engine.sub_levels = " << sub_levels << '\n';
  os << "engine.entry_budget = " << format_double(entry_budget) << '\n';
  os << "engine.b0_center = " << format_vector(b0_center) << '\n';
  os << "engine.b0_radius = " << format_double(b0_radius) << '\n';
  os << "engine.omega_center = " << format_vector(omega_center) << '\n';
  os << "engine.omega_radius = " << format_double(omega_radius) << '\n';
  os << "engine.m_bound = " << format_double(m_bound) << '\n';
  os << "out.dir = " << out_dir << '\n';
  return os.str();
}

SceneConfig ExperimentConfig::scene() const {
  const ApproxFunction psi = parse_psi_spec(psi_spec);
  Eigen::MatrixXd Phi;
  if (phi.empty()) {
    Phi = Eigen::MatrixXd::Identity(m, m);
  } else {
    if (static_cast<int>(phi.size()) != m)
      throw config_error("config: scene.phi needs " + std::to_string(m) + " rows");
    Phi.resize(m, m);
    for (int i = 0; i < m; ++i) {
      if (static_cast<int>(phi[static_cast<std::size_t>(i)].size()) != m)
        throw config_error("config: scene.phi rows need " + std::to_string(m) + " entries");
      for (int j = 0; j < m; ++j) Phi(i, j) = phi[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  Vec yv = Vec::Zero(m);
  if (!y.empty()) {
    if (static_cast<int>(y.size()) != m)
      throw config_error("config: scene.y needs " + std::to_string(m) + " entries");
    for (int i = 0; i < m; ++i) yv(i) = y[static_cast<std::size_t>(i)];
  }
  std::optional<Partition> part;
  if (!partition.empty()) {
    if (static_cast<int>(partition.size()) != n)
      throw config_error("config: scene.partition needs one block id per variable");
    part = Partition::from_blocks(partition);
  }
  return SceneConfig::make(n, m, psi, std::move(Phi), std::move(yv), std::move(part));
}

TransferPair ExperimentConfig::pair() const {
  const DimensionFunction f = parse_dimfun_spec(f_spec);
  const int pm = pair_m == 0 ? m : pair_m;
  const int pl = pair_l < 0 ? m * (n - 1) : pair_l;
  return TransferPair::derive(f, pm, pl);
}

TransferPair ExperimentConfig::engine_pair() const {
  if (source != "dyadic") return pair();
  const DimensionFunction f = parse_dimfun_spec(f_spec);
  const int pm = pair_m == 0 ? 1 : pair_m;
  const int pl = pair_l < 0 ? ambient - 1 : pair_l;
  return TransferPair::derive(f, pm, pl);
}

std::vector<ScheduleEntry> ExperimentConfig::parsed_schedule() const {
  std::vector<ScheduleEntry> out;
  const std::string t = trim(schedule);
  if (t.empty()) return out;
  for (const std::string& cell : split(t, ',')) {
    const auto colon = cell.find(':');
    if (colon == std::string::npos)
      throw config_error("config: estimator.schedule entries are Q:delta, got '" + cell + "'");
    const int sq = static_cast<int>(parse_int(cell.substr(0, colon), "schedule Q"));
    const double delta = parse_double(cell.substr(colon + 1));
    if (sq < 1) throw config_error("config: schedule Q must be >= 1, got '" + cell + "'");
    if (!(delta > 0.0) || !std::isfinite(delta))
      throw config_error("config: schedule delta must be positive, got '" + cell + "'");
    out.push_back({sq, delta});
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV
// ---------------------------------------------------------------------------

void CsvTable::add_row(std::vector<std::string> cells) {
  if (cells.size() != columns.size())
    throw config_error("csv: row has " + std::to_string(cells.size()) + " cells, header has " +
                       std::to_string(columns.size()));
  rows.push_back(std::move(cells));
}

std::string CsvTable::to_text() const {
  std::ostringstream os;
  os << "# linforms-csv v1\n";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (i) os << ',';
    os << columns[i];
  }
  os << '\n';
  for (const std::vector<std::string>& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      if (i) os << ',';
      os << row[i];
    }
    os << '\n';
  }
  return os.str();
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw config_error("cannot read file '" + path + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw config_error("cannot write file '" + path + "'");
  out << content;
  if (!out) throw config_error("write to '" + path + "' failed");
}

}  // namespace linforms
