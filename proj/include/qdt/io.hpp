#pragma once

// File formats. CSV numbers are written with 17 significant digits so every
// double round-trips; parse errors name the file and the line.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "analysis.hpp"
#include "entanglement.hpp"
#include "fock.hpp"
#include "solver.hpp"

namespace qdt::io {

using json = nlohmann::json;

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write '" + path + "'");
  out << content;
  if (!out) throw ValidationError("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;
  /// Source line of each row (1-based), for error messages.
  std::vector<int> lines;
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    auto cell = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!cell.empty() && (cell.front() == ' ' || cell.front() == '\t')) cell.remove_prefix(1);
    while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t' || cell.back() == '\r'))
      cell.remove_suffix(1);
    out.push_back(cell);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

} // namespace detail

/// Header line plus numeric rows. Blank lines and lines starting with '#'
/// are skipped.
inline CsvTable parse_csv(std::string_view text, const std::string& name = "<csv>") {
  CsvTable t;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    std::string_view line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos || line.front() == '#') continue;
    const auto cells = detail::split(line);
    if (t.header.empty()) {
      for (auto c : cells) t.header.emplace_back(c);
      continue;
    }
    if (cells.size() != t.header.size())
      throw ValidationError(name + ": line " + std::to_string(line_no) + ": expected " +
                            std::to_string(t.header.size()) + " fields, found " +
                            std::to_string(cells.size()));
    std::vector<double> row;
    for (std::size_t i = 0; i < cells.size(); ++i) {
      double v = 0.0;
      const auto* end = cells[i].data() + cells[i].size();
      const auto [ptr, ec] = std::from_chars(cells[i].data(), end, v);
      if (cells[i].empty() || ec != std::errc() || ptr != end || !std::isfinite(v))
        throw ValidationError(name + ": line " + std::to_string(line_no) + ": field '" +
                              t.header[i] + "' is not a number: '" + std::string(cells[i]) + "'");
      row.push_back(v);
    }
    t.rows.push_back(std::move(row));
    t.lines.push_back(line_no);
  }
  if (t.header.empty()) throw ValidationError(name + ": empty CSV");
  return t;
}

inline CsvTable read_csv(const std::string& path) { return parse_csv(read_file(path), path); }

// ---------------------------------------------------------------------------
// probes: x[,sigma_rel] with an optional "# kind=mixed" line

inline std::string probes_csv(const ProbeEnsemble& probes) {
  std::string s = "# kind=" + to_string(probes.kind()) + "\nx,sigma_rel\n";
  for (double x : probes.intensities()) s += fmt_double(x) + "," + fmt_double(probes.sigma_rel()) + "\n";
  return s;
}

inline ProbeEnsemble parse_probes_csv(std::string_view text, const std::string& name = "<probes>") {
  ProbeKind kind = ProbeKind::pure;
  if (const auto at = text.find("# kind="); at != std::string_view::npos) {
    const auto end = text.find_first_of("\r\n", at);
    kind = probe_kind_from_string(std::string(text.substr(at + 7, end == std::string_view::npos ? std::string_view::npos : end - at - 7)));
  }
  const auto t = parse_csv(text, name);
  if (t.header.empty() || t.header[0] != "x")
    throw ValidationError(name + ": probe file needs an 'x' column first");
  double sigma = kDefaultSigmaRel;
  std::vector<double> xs;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    xs.push_back(t.rows[i][0]);
    if (t.header.size() > 1 && t.header[1] == "sigma_rel") sigma = t.rows[i][1];
  }
  try {
    return ProbeEnsemble(std::move(xs), kind, sigma);
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

inline ProbeEnsemble read_probes(const std::string& path) { return parse_probes_csv(read_file(path), path); }

// ---------------------------------------------------------------------------
// statistics: x,p0,...,p{N-1}[,trials]

inline std::string statistics_csv(const StatisticsMatrix& p, std::span<const double> xs) {
  if (static_cast<Eigen::Index>(xs.size()) != p.probs.rows())
    throw DimensionMismatch("statistics and probe list disagree on probe count");
  std::string s = "x";
  for (int n = 0; n < p.outcomes(); ++n) s += ",p" + std::to_string(n);
  if (!p.trials.empty()) s += ",trials";
  s += "\n";
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
    s += fmt_double(xs[static_cast<std::size_t>(i)]);
    for (int n = 0; n < p.outcomes(); ++n) s += "," + fmt_double(p.probs(i, n));
    if (!p.trials.empty()) s += "," + std::to_string(p.trials[static_cast<std::size_t>(i)]);
    s += "\n";
  }
  return s;
}

struct StatisticsFile {
  std::vector<double> xs;
  StatisticsMatrix stats;
};

inline StatisticsFile parse_statistics_csv(std::string_view text, const std::string& name = "<statistics>") {
  const auto t = parse_csv(text, name);
  if (t.header.size() < 2 || t.header[0] != "x")
    throw ValidationError(name + ": statistics need columns x,p0,...");
  const bool has_trials = t.header.back() == "trials";
  const auto n_out = static_cast<Eigen::Index>(t.header.size() - 1 - (has_trials ? 1 : 0));
  if (n_out < 1) throw ValidationError(name + ": statistics have no outcome columns");
  StatisticsFile f;
  f.stats.probs.resize(static_cast<Eigen::Index>(t.rows.size()), n_out);
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    f.xs.push_back(r[0]);
    for (Eigen::Index n = 0; n < n_out; ++n) {
      const double v = r[static_cast<std::size_t>(n) + 1];
      if (v < -1e-9 || v > 1.0 + 1e-9)
        throw ValidationError(name + ": line " + std::to_string(t.lines[i]) + ": probability " +
                              fmt_double(v) + " outside [0, 1]");
      f.stats.probs(static_cast<Eigen::Index>(i), n) = v;
    }
    if (has_trials) {
      if (!(r.back() >= 1.0) || r.back() != std::floor(r.back()))
        throw ValidationError(name + ": line " + std::to_string(t.lines[i]) + ": trials must be a positive integer");
      f.stats.trials.push_back(static_cast<std::int64_t>(r.back()));
    }
  }
  return f;
}

inline json statistics_json(const StatisticsMatrix& p, std::span<const double> xs) {
  json j;
  j["x"] = std::vector<double>(xs.begin(), xs.end());
  j["probs"] = json::array();
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i) {
    std::vector<double> row;
    for (Eigen::Index n = 0; n < p.probs.cols(); ++n) row.push_back(p.probs(i, n));
    j["probs"].push_back(row);
  }
  if (!p.trials.empty()) j["trials"] = p.trials;
  return j;
}

inline StatisticsFile statistics_from_json(const json& j, const std::string& name = "<statistics>") {
  try {
    StatisticsFile f;
    f.xs = j.at("x").get<std::vector<double>>();
    const auto rows = j.at("probs").get<std::vector<std::vector<double>>>();
    if (rows.size() != f.xs.size()) throw ValidationError(name + ": x and probs disagree on probe count");
    const auto n_out = rows.empty() ? 0 : rows[0].size();
    f.stats.probs.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_out));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i].size() != n_out)
        throw ValidationError(name + ": probs row " + std::to_string(i) + " has " +
                              std::to_string(rows[i].size()) + " entries, expected " + std::to_string(n_out));
      for (std::size_t n = 0; n < n_out; ++n)
        f.stats.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = rows[i][n];
    }
    if (j.contains("trials")) f.stats.trials = j["trials"].get<std::vector<std::int64_t>>();
    return f;
  } catch (const json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

/// Reads CSV, or JSON when the content starts with '{'.
inline StatisticsFile read_statistics(const std::string& path) {
  const auto text = read_file(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ValidationError(path + ": " + e.what());
    }
    return statistics_from_json(j, path);
  }
  return parse_statistics_csv(text, path);
}

// ---------------------------------------------------------------------------
// POVM: k,theta0,...,theta{N-1}

inline std::string povm_csv(const FockDiagonalPOVM& povm) {
  std::string s = "k";
  for (int n = 0; n < povm.outcomes(); ++n) s += ",theta" + std::to_string(n);
  s += "\n";
  for (int k = 0; k <= povm.truncation(); ++k) {
    s += std::to_string(k);
    for (int n = 0; n < povm.outcomes(); ++n) s += "," + fmt_double(povm(k, n));
    s += "\n";
  }
  return s;
}

inline FockDiagonalPOVM parse_povm_csv(std::string_view text, const std::string& name = "<povm>") {
  const auto t = parse_csv(text, name);
  if (t.header.size() < 2 || t.header[0] != "k") throw ValidationError(name + ": POVM needs columns k,theta0,...");
  Matrix theta(static_cast<Eigen::Index>(t.rows.size()), static_cast<Eigen::Index>(t.header.size() - 1));
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    if (t.rows[i][0] != static_cast<double>(i))
      throw ValidationError(name + ": line " + std::to_string(t.lines[i]) + ": expected Fock level " +
                            std::to_string(i));
    for (std::size_t n = 1; n < t.header.size(); ++n)
      theta(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n - 1)) = t.rows[i][n];
  }
  try {
    return FockDiagonalPOVM(std::move(theta));
  } catch (const ValidationError& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

inline FockDiagonalPOVM read_povm(const std::string& path) { return parse_povm_csv(read_file(path), path); }

inline json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json r = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline json config_json(const SolverConfig& c) {
  return {{"regularizer", to_string(c.regularizer)},
          {"y", c.y},
          {"damping_c", c.damping_c},
          {"weights", c.weights},
          {"eps_primal", c.eps_primal},
          {"eps_dual", c.eps_dual},
          {"max_iter", c.max_iterations},
          {"noise_runs", c.noise_runs},
          {"noise_sigma_rel", c.noise_sigma_rel},
          {"seed", c.seed}};
}

/// Reads the solver keys; unknown keys are rejected so typos do not pass silently.
inline SolverConfig config_from_json(const json& j, SolverConfig c = {}) {
  if (!j.is_object()) throw ValidationError("solver config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "regularizer") c.regularizer = regularizer_from_string(v.get<std::string>());
      else if (key == "y") c.y = v.get<double>();
      else if (key == "damping_c") c.damping_c = v.get<double>();
      else if (key == "weights") c.weights = v.get<std::vector<double>>();
      else if (key == "eps_primal") c.eps_primal = v.get<double>();
      else if (key == "eps_dual") c.eps_dual = v.get<double>();
      else if (key == "max_iter") c.max_iterations = v.get<int>();
      else if (key == "noise_runs") c.noise_runs = v.get<int>();
      else if (key == "noise_sigma_rel") c.noise_sigma_rel = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else throw ValidationError("unknown config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

inline json report_json(const ReconstructionReport& r, const SolverConfig& cfg) {
  json j;
  j["povm"] = matrix_json(r.povm.coeffs());
  j["outcomes"] = r.povm.outcomes();
  j["truncation"] = r.povm.truncation();
  j["residual"] = r.residual;
  j["penalty"] = r.penalty;
  j["smoothing_penalty"] = smoothing_penalty(r.povm);
  j["objective"] = r.objective;
  j["convergence"] = {{"converged", r.converged},
                      {"iterations", r.iterations},
                      {"kkt_residual", r.kkt_residual},
                      {"primal_residual", r.primal_residual},
                      {"dual_residual", r.dual_residual},
                      {"polished", r.polished}};
  j["config"] = config_json(cfg);
  if (!r.runs.empty()) {
    j["noise_averaging"] = {{"runs", r.runs.size()}, {"failed_runs", r.failed_runs}};
    json runs = json::array();
    for (const auto& p : r.runs) runs.push_back(matrix_json(p.coeffs()));
    j["noise_averaging"]["per_run_povms"] = std::move(runs);
  }
  return j;
}

// ---------------------------------------------------------------------------
// sweeps and Wigner profiles

/// axis,repeat,metric,seed,y: y is the smoothing weight of the cell.
inline std::string sweep_csv(const SweepTable& t) {
  std::string s = "axis,repeat,metric,seed,y\n";
  for (const auto& c : t.cells)
    s += fmt_double(c.axis) + "," + std::to_string(c.repeat) + "," + fmt_double(c.metric) + "," +
         std::to_string(c.seed) + "," + fmt_double(c.y) + "\n";
  return s;
}

inline json sweep_json(const SweepTable& t) {
  json j;
  j["kind"] = t.kind;
  j["model"] = t.model;
  j["metric"] = t.metric;
  j["setup"] = {{"probes", std::vector<double>(t.setup.probes.intensities().begin(),
                                               t.setup.probes.intensities().end())},
                {"probe_kind", to_string(t.setup.probes.kind())},
                {"sigma_rel", t.setup.probes.sigma_rel()},
                {"truncation", t.setup.truncation},
                {"tail_tol", t.setup.tail_tol},
                {"shots", t.setup.shots},
                {"seed", t.setup.seed},
                {"solver", config_json(t.setup.solver)}};
  j["cells"] = json::array();
  for (const auto& c : t.cells)
    j["cells"].push_back({{"axis", c.axis},
                          {"repeat", c.repeat},
                          {"metric", c.metric},
                          {"seed", c.seed},
                          {"y", c.y},
                          {"converged", c.converged},
                          {"iterations", c.iterations},
                          {"fidelities", c.fidelities}});
  return j;
}

inline std::string wigner_csv(const WignerRadialProfile& w) {
  std::string s = "r,W\n";
  for (std::size_t i = 0; i < w.radii.size(); ++i) s += fmt_double(w.radii[i]) + "," + fmt_double(w.values[i]) + "\n";
  return s;
}

// ---------------------------------------------------------------------------
// joint data: matrices are row-major arrays of [re, im] pairs

inline json cmatrix_json(const CMatrix& m) {
  json a = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) a.push_back({m(i, j).real(), m(i, j).imag()});
  return a;
}

inline CMatrix cmatrix_from_json(const json& a, int dim, const std::string& where) {
  if (!a.is_array() || a.size() != static_cast<std::size_t>(dim) * static_cast<std::size_t>(dim))
    throw ValidationError(where + ": expected " + std::to_string(dim * dim) + " [re, im] pairs");
  CMatrix m(dim, dim);
  for (int i = 0; i < dim; ++i)
    for (int j = 0; j < dim; ++j) {
      const auto& e = a[static_cast<std::size_t>(i * dim + j)];
      if (!e.is_array() || e.size() != 2) throw ValidationError(where + ": entries must be [re, im] pairs");
      m(i, j) = Complex(e[0].get<double>(), e[1].get<double>());
    }
  return m;
}

inline json joint_data_json(const JointData& d) {
  json j;
  j["dims"] = {d.dim_a, d.dim_b};
  auto sets = [](const std::vector<PovmSet>& s) {
    json out = json::array();
    for (const auto& set : s) {
      json e = json::array();
      for (const auto& m : set) e.push_back(cmatrix_json(m));
      out.push_back(std::move(e));
    }
    return out;
  };
  j["settings_A"] = sets(d.settings_a);
  j["settings_B"] = sets(d.settings_b);
  j["data"] = json::object();
  for (const auto& [kl, m] : d.data)
    j["data"][std::to_string(kl.first) + "," + std::to_string(kl.second)] = matrix_json(m);
  if (d.unbounded) j["unbounded"] = true;
  return j;
}

inline JointData joint_data_from_json(const json& j, const std::string& name = "<joint data>") {
  try {
    JointData d;
    const auto dims = j.at("dims").get<std::vector<int>>();
    if (dims.size() != 2) throw ValidationError(name + ": dims must be [dA, dB]");
    d.dim_a = dims[0];
    d.dim_b = dims[1];
    if (d.dim_a < 1 || d.dim_b < 1) throw ValidationError(name + ": dims must be >= 1");
    if (d.dim_a * d.dim_b > kMaxJointDimension)
      throw DimensionCap(name + ": d_A d_B = " + std::to_string(d.dim_a * d.dim_b) + " exceeds the cap " +
                         std::to_string(kMaxJointDimension));
    auto sets = [&](const json& s, int dim, const char* side) {
      std::vector<PovmSet> out;
      for (std::size_t k = 0; k < s.size(); ++k) {
        PovmSet set;
        for (std::size_t n = 0; n < s[k].size(); ++n)
          set.push_back(cmatrix_from_json(s[k][n], dim,
                                          name + ": settings_" + side + "[" + std::to_string(k) + "][" +
                                              std::to_string(n) + "]"));
        out.push_back(std::move(set));
      }
      return out;
    };
    d.settings_a = sets(j.at("settings_A"), d.dim_a, "A");
    d.settings_b = sets(j.at("settings_B"), d.dim_b, "B");
    for (const auto& [key, rows] : j.at("data").items()) {
      const auto comma = key.find(',');
      int k = -1, l = -1;
      if (comma != std::string::npos) {
        std::from_chars(key.data(), key.data() + comma, k);
        std::from_chars(key.data() + comma + 1, key.data() + key.size(), l);
      }
      if (k < 0 || l < 0) throw ValidationError(name + ": data key '" + key + "' is not \"k,l\"");
      const auto r = rows.get<std::vector<std::vector<double>>>();
      Matrix m(static_cast<Eigen::Index>(r.size()), r.empty() ? 0 : static_cast<Eigen::Index>(r[0].size()));
      for (std::size_t a = 0; a < r.size(); ++a) {
        if (static_cast<Eigen::Index>(r[a].size()) != m.cols())
          throw ValidationError(name + ": data '" + key + "' is ragged");
        for (std::size_t b = 0; b < r[a].size(); ++b) m(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) = r[a][b];
      }
      d.data[{k, l}] = std::move(m);
    }
    d.unbounded = j.value("unbounded", false);
    return d;
  } catch (const json::exception& e) {
    throw ValidationError(name + ": " + e.what());
  }
}

inline json bound_json(const NegativityBound& b) {
  json j;
  j["bound"] = b.bound;
  j["alpha"] = b.alpha;
  j["beta"] = b.beta;
  j["witness"] = cmatrix_json(b.witness);
  j["witness_eigenvalues"] = std::vector<double>(b.witness_eigenvalues.data(),
                                                 b.witness_eigenvalues.data() + b.witness_eigenvalues.size());
  j["certificate_margin"] = b.certificate_margin;
  j["iterations"] = b.iterations;
  j["primal_residual"] = b.primal_residual;
  j["dual_residual"] = b.dual_residual;
  return j;
}

} // namespace qdt::io
