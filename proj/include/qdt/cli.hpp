#pragma once

// The qdt command-line front end. run_cli() is the whole program; tools/qdt.cpp
// only forwards argv, so tests drive it in-process.
//
// Exit codes: 0 ok, 2 invalid input, 3 solver did not converge, 1 anything else.

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <openssl/evp.h>

#include "analysis.hpp"
#include "detectors.hpp"
#include "entanglement.hpp"
#include "io.hpp"
#include "solver.hpp"

namespace qdt::cli {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kOutDirEnv = "QDT_OUT_DIR";

enum ExitCode : int { kOk = 0, kFailure = 1, kInvalid = 2, kNotConverged = 3 };

inline std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr);
  static constexpr char hex[] = "0123456789abcdef";
  std::string s;
  for (unsigned i = 0; i < len; ++i) {
    s += hex[md[i] >> 4];
    s += hex[md[i] & 15];
  }
  return s;
}

/// Records what a command read, wrote and was configured with.
class RunManifest {
public:
  explicit RunManifest(std::string command)
      : command_(std::move(command)), start_(std::chrono::steady_clock::now()) {}

  io::json& config() { return config_; }
  void seed(std::uint64_t s) { seed_ = s; }

  void input(const std::string& path, const std::string& content) {
    inputs_[path] = sha256_hex(content);
  }

  void write(const std::filesystem::path& dir, const std::string& name, const std::string& content) {
    io::write_file((dir / name).string(), content);
    outputs_[name] = sha256_hex(content);
  }

  io::json finish() const {
    const auto secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    const std::time_t now = std::time(nullptr);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
    io::json j{{"command", command_},
               {"tool_version", kVersion},
               {"config", config_},
               {"inputs", inputs_},
               {"outputs", outputs_},
               {"duration_seconds", secs},
               {"timestamp", stamp}};
    if (seed_) j["seed"] = *seed_;
    return j;
  }

private:
  std::string command_;
  std::chrono::steady_clock::time_point start_;
  io::json config_ = io::json::object();
  std::map<std::string, std::string> inputs_, outputs_;
  std::optional<std::uint64_t> seed_;
};

namespace detail {

inline std::filesystem::path out_dir(const std::string& flag) {
  std::filesystem::path dir = flag;
  if (dir.empty()) {
    const char* env = std::getenv(kOutDirEnv);
    dir = env && *env ? env : ".";
  }
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw ValidationError("--out: cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

inline void finish(RunManifest& m, const std::filesystem::path& dir) {
  io::write_file((dir / "manifest.json").string(), m.finish().dump(2) + "\n");
}

inline std::vector<double> parse_list(const std::string& s, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
    if (ec != std::errc() || p != item.data() + item.size())
      throw ValidationError(flag + ": '" + item + "' is not a number");
    out.push_back(v);
  }
  return out;
}

struct SimulateArgs {
  std::string model = "lossy_tmd_52";
  double eta = 1.0;
  int bins = 0;
  std::vector<double> reflectivities;
  int truncation = kDefaultTruncation;
  double xmin = 0.0, xmax = 30.0;
  int count = 60;
  std::string spacing = "linear";
  std::string kind = "pure";
  double sigma_rel = kDefaultSigmaRel;
  std::int64_t shots = 0;
  double jitter = 0.0;
  std::uint64_t seed = 1;
  double tail_tol = kDefaultTailTol;
  std::string out;
};

inline FockDiagonalPOVM simulate_model(const SimulateArgs& a) {
  if (a.model == "apd") {
    if (a.bins != 0 && a.bins != 1) throw ValidationError("--bins: an APD has a single bin");
    return apd_povm(a.eta, a.truncation);
  }
  if (a.model == "tmd") {
    return lossy_tmd_povm(SplitterTree(a.reflectivities), a.eta, a.truncation);
  }
  const ZooCase c = zoo_case_from_string(a.model);
  auto povm = povm_zoo(c, a.truncation);
  if (a.bins != 0 && a.bins != povm.outcomes() - 1)
    throw ValidationError("--bins: model " + a.model + " has " + std::to_string(povm.outcomes() - 1) + " bins");
  return povm;
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  RunManifest m("simulate");
  auto& cfg = m.config();
  cfg = {{"model", a.model},         {"eta", a.eta},         {"bins", a.bins},
         {"reflectivities", a.reflectivities}, {"truncation", a.truncation}, {"xmin", a.xmin},
         {"xmax", a.xmax},           {"count", a.count},     {"spacing", a.spacing},
         {"kind", a.kind},           {"sigma_rel", a.sigma_rel}, {"shots", a.shots},
         {"jitter", a.jitter},       {"tail_tol", a.tail_tol}};
  m.seed(a.seed);

  if (a.model == "tmd" && a.reflectivities.empty()) {
    int depth = 0;
    while ((1 << depth) < a.bins) ++depth;
    if (a.bins < 2 || (1 << depth) != a.bins) throw ValidationError("--bins: tmd needs a power of two >= 2");
    auto b = a;
    b.reflectivities.assign(static_cast<std::size_t>(depth), 0.5);
    return cmd_simulate(b, out);
  }
  if (a.model == "tmd" && a.bins != 0 && a.bins != (1 << a.reflectivities.size()))
    throw ValidationError("--bins: does not match the number of --reflectivities");

  const auto truth = simulate_model(a);
  const ProbeKind kind = probe_kind_from_string(a.kind);
  if (a.spacing != "linear" && a.spacing != "log") throw ValidationError("--spacing: expected linear or log");
  const auto probes = a.spacing == "log" ? ProbeEnsemble::logarithmic(a.xmin, a.xmax, a.count, kind, a.sigma_rel)
                                         : ProbeEnsemble::linear(a.xmin, a.xmax, a.count, kind, a.sigma_rel);
  if (a.shots < 0) throw ValidationError("--shots: must be >= 0");
  if (!(a.jitter >= 0.0)) throw ValidationError("--jitter: must be >= 0");

  // Data see the jittered intensities; the probe file keeps the nominal ones.
  const auto xs = jitter_intensities(probes.intensities(), a.jitter, a.seed, 1);
  const auto f = build_response(xs, probes.kind(), probes.sigma_rel(), a.truncation, a.tail_tol);
  auto p = predict_statistics(truth, f);
  if (a.shots > 0) p = sample_statistics(p, a.shots, a.seed);

  const auto dir = out_dir(a.out);
  m.write(dir, "probes.csv", io::probes_csv(probes));
  m.write(dir, "statistics.csv", io::statistics_csv(p, probes.intensities()));
  m.write(dir, "statistics.json", io::statistics_json(p, probes.intensities()).dump(2) + "\n");
  m.write(dir, "povm.csv", io::povm_csv(truth));
  finish(m, dir);
  out << "wrote " << probes.size() << " probes x " << truth.outcomes() << " outcomes to " << dir.string() << "\n";
  return kOk;
}

struct ReconstructArgs {
  std::string stats, probes, config;
  std::optional<std::string> regularizer;
  std::optional<double> y;
  std::optional<std::string> response;
  int truncation = kDefaultTruncation;
  double tail_tol = kDefaultTailTol;
  bool allow_nonconverged = false;
  unsigned jobs = 1;
  std::string out;
};

inline int cmd_reconstruct(const ReconstructArgs& a, std::ostream& out, std::ostream& err) {
  RunManifest m("reconstruct");
  const auto stats_text = io::read_file(a.stats);
  const auto probes_text = io::read_file(a.probes);
  m.input(a.stats, stats_text);
  m.input(a.probes, probes_text);

  const auto sf = io::read_statistics(a.stats);
  auto probes = io::parse_probes_csv(probes_text, a.probes);
  if (a.response) probes = probes.with_kind(probe_kind_from_string(*a.response), probes.sigma_rel());

  SolverConfig cfg;
  if (!a.config.empty()) {
    const auto text = io::read_file(a.config);
    m.input(a.config, text);
    io::json j;
    try {
      j = io::json::parse(text);
    } catch (const io::json::parse_error& e) {
      throw ValidationError(a.config + ": " + e.what());
    }
    cfg = io::config_from_json(j);
  }
  if (a.regularizer) cfg.regularizer = regularizer_from_string(*a.regularizer);
  if (a.y) cfg.y = *a.y;
  cfg.jobs = a.jobs;
  cfg.validate();

  if (sf.xs.size() != probes.size())
    throw DimensionMismatch("statistics have " + std::to_string(sf.xs.size()) + " probes, probe file has " +
                            std::to_string(probes.size()));
  for (std::size_t i = 0; i < sf.xs.size(); ++i)
    if (std::abs(sf.xs[i] - probes.intensities()[i]) > 1e-12 * std::max(1.0, std::abs(sf.xs[i])))
      throw ValidationError("statistics x and probe file disagree at probe " + std::to_string(i));

  m.config() = io::config_json(cfg);
  m.config()["truncation"] = a.truncation;
  m.config()["tail_tol"] = a.tail_tol;
  m.config()["probe_kind"] = to_string(probes.kind());
  m.config()["sigma_rel"] = probes.sigma_rel();
  m.seed(cfg.seed);

  ReconstructionReport rep;
  if (cfg.noise_runs > 0) {
    rep = noise_average_reconstruct(sf.stats, probes, cfg, a.truncation, a.tail_tol);
  } else {
    const auto f = build_response(probes, a.truncation, a.tail_tol);
    rep = reconstruct(sf.stats, f, cfg);
  }

  const auto dir = out_dir(a.out);
  m.write(dir, "report.json", io::report_json(rep, cfg).dump(2) + "\n");
  m.write(dir, "povm.csv", io::povm_csv(rep.povm));
  finish(m, dir);
  out << "residual " << io::fmt_double(rep.residual) << ", kkt " << io::fmt_double(rep.kkt_residual)
      << ", " << rep.iterations << " iterations, " << (rep.converged ? "converged" : "NOT converged") << "\n";
  if (!rep.converged && !a.allow_nonconverged) {
    err << "error: solver did not converge (use --allow-nonconverged to accept)\n";
    return kNotConverged;
  }
  return kOk;
}

struct SweepArgs {
  std::string kind;
  std::string model = "lossy_tmd_52";
  std::string ys = "0.001,0.01,0.05,0.1,0.2,1";
  std::string deltas = "0,0.01,0.02,0.05";
  int repeats = 4;
  double xmax = 30.0;
  int count = 60;
  std::int64_t shots = 38'084;
  std::uint64_t seed = 1;
  unsigned jobs = 1;
  std::string out;
};

inline int cmd_sweep(const SweepArgs& a, std::ostream& out) {
  RunManifest m("sweep");
  const auto model = zoo_case_from_string(a.model);
  const auto ys = parse_list(a.ys, "--y");
  if (ys.empty()) throw ValidationError("--y: empty grid");

  SweepSetup setup;
  setup.probes = ProbeEnsemble::linear(0.0, a.xmax, a.count, ProbeKind::mixed, kDefaultSigmaRel);
  setup.shots = a.shots;
  setup.seed = a.seed;
  setup.jobs = a.jobs;
  m.seed(a.seed);
  m.config() = {{"kind", a.kind}, {"model", a.model}, {"y", ys},     {"xmax", a.xmax},
                {"count", a.count}, {"shots", a.shots}, {"repeats", a.repeats}};

  SweepTable t;
  if (a.kind == "smoothing") {
    t = smoothing_sweep(model, ys, setup);
  } else if (a.kind == "noise") {
    const auto deltas = parse_list(a.deltas, "--delta");
    if (deltas.empty()) throw ValidationError("--delta: empty grid");
    m.config()["delta"] = deltas;
    t = noise_resilience_sweep(model, deltas, ys, a.repeats, setup);
  } else {
    throw ValidationError("sweep kind must be smoothing or noise");
  }
  const auto dir = out_dir(a.out);
  m.write(dir, "sweep_" + a.kind + ".csv", io::sweep_csv(t));
  m.write(dir, "sweep_" + a.kind + ".json", io::sweep_json(t).dump(2) + "\n");
  finish(m, dir);
  out << t.cells.size() << " cells written to " << dir.string() << "\n";
  return kOk;
}

struct AnalyzeArgs {
  std::string what;
  std::vector<std::string> povms;
  int element = -1;
  double rmax = 6.0;
  int points = 400;
  std::string out;
};

inline int cmd_analyze(const AnalyzeArgs& a, std::ostream& out) {
  RunManifest m("analyze");
  std::vector<FockDiagonalPOVM> povms;
  for (const auto& p : a.povms) {
    const auto text = io::read_file(p);
    m.input(p, text);
    povms.push_back(io::parse_povm_csv(text, p));
  }
  m.config() = {{"what", a.what}, {"element", a.element}, {"rmax", a.rmax}, {"points", a.points}};
  const auto dir = out_dir(a.out);

  if (a.what == "wigner") {
    if (!(a.rmax > 0.0) || a.points < 2) throw ValidationError("--rmax/--points: need rmax > 0, points >= 2");
    std::vector<double> radii(static_cast<std::size_t>(a.points));
    for (int i = 0; i < a.points; ++i) radii[static_cast<std::size_t>(i)] = a.rmax * i / (a.points - 1);
    for (std::size_t f = 0; f < povms.size(); ++f) {
      const int first = a.element >= 0 ? a.element : 0;
      const int last = a.element >= 0 ? a.element : povms[f].outcomes() - 1;
      for (int n = first; n <= last; ++n)
        m.write(dir, "wigner_" + std::to_string(f) + "_n" + std::to_string(n) + ".csv",
                io::wigner_csv(wigner_radial(povms[f], n, radii)));
    }
  } else if (a.what == "fidelity" || a.what == "relerr") {
    if (povms.size() != 2) throw ValidationError("--povm: " + a.what + " needs exactly two POVM files");
    io::json j;
    if (a.what == "fidelity") {
      const auto f = element_fidelities(povms[0], povms[1]);
      std::string csv = "n,fidelity\n";
      for (std::size_t n = 0; n < f.size(); ++n) csv += std::to_string(n) + "," + io::fmt_double(f[n]) + "\n";
      m.write(dir, "fidelity.csv", csv);
      const double lo = *std::min_element(f.begin(), f.end());
      j = {{"fidelities", f}, {"minimum", lo}};
      out << "minimum fidelity " << io::fmt_double(lo) << "\n";
    } else {
      const double e = relative_error(povms[0], povms[1]);
      j = {{"relative_error_percent", e}};
      out << "relative error " << io::fmt_double(e) << " %\n";
    }
    m.write(dir, a.what + ".json", j.dump(2) + "\n");
  } else {
    throw ValidationError("analyze: --what must be wigner, fidelity or relerr");
  }
  finish(m, dir);
  return kOk;
}

struct VerifyArgs {
  std::string data;
  double tol = 1e-6;
  std::string out;
};

inline int cmd_verify(const VerifyArgs& a, std::ostream& out) {
  RunManifest m("verify-entanglement");
  const auto text = io::read_file(a.data);
  m.input(a.data, text);
  io::json j;
  try {
    j = io::json::parse(text);
  } catch (const io::json::parse_error& e) {
    throw ValidationError(a.data + ": " + e.what());
  }
  const auto data = io::joint_data_from_json(j, a.data);
  m.config() = {{"tol", a.tol}};
  NegativityOptions opt;
  opt.tol = a.tol;
  const auto b = negativity_lower_bound(data, opt);
  const auto dir = out_dir(a.out);
  m.write(dir, "bound.json", io::bound_json(b).dump(2) + "\n");
  finish(m, dir);
  out << "negativity >= " << io::fmt_double(b.bound) << "\n";
  return kOk;
}

} // namespace detail

inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout,
                   std::ostream& err = std::cerr) {
  CLI::App app{"Fock-diagonal detector tomography"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  detail::SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "synthetic probe statistics from a detector model");
  s->add_option("--model", sim.model, "apd, tmd, or a benchmark case")->capture_default_str();
  s->add_option("--eta", sim.eta, "efficiency (apd, tmd)")->capture_default_str();
  s->add_option("--bins", sim.bins, "number of bins (checked against the model)");
  s->add_option("--reflectivities", sim.reflectivities, "splitter reflectivities, level 1 first (tmd)")->delimiter(',');
  s->add_option("-M,--truncation", sim.truncation)->capture_default_str();
  s->add_option("--xmin", sim.xmin)->capture_default_str();
  s->add_option("--xmax", sim.xmax)->capture_default_str();
  s->add_option("--count", sim.count, "number of probes D")->capture_default_str();
  s->add_option("--spacing", sim.spacing, "linear or log")->capture_default_str();
  s->add_option("--kind", sim.kind, "pure or mixed")->capture_default_str();
  s->add_option("--sigma-rel", sim.sigma_rel)->capture_default_str();
  s->add_option("--shots", sim.shots, "trials per probe; 0 writes exact probabilities")->capture_default_str();
  s->add_option("--jitter", sim.jitter, "relative Gaussian jitter applied to the true intensities")->capture_default_str();
  s->add_option("--seed", sim.seed)->capture_default_str();
  s->add_option("--tail-tol", sim.tail_tol)->capture_default_str();
  s->add_option("-o,--out", sim.out, std::string("output directory (default $") + kOutDirEnv + " or .)");

  detail::ReconstructArgs rec;
  auto* r = app.add_subcommand("reconstruct", "estimate a POVM from statistics");
  r->add_option("--stats", rec.stats, "statistics CSV or JSON")->required();
  r->add_option("--probes", rec.probes, "probe CSV")->required();
  r->add_option("--config", rec.config, "solver config JSON");
  r->add_option("--regularizer", rec.regularizer, "none, smoothing, damping, weighting");
  r->add_option("--y", rec.y, "smoothing weight");
  r->add_option("--response", rec.response, "override the probe kind: pure or mixed");
  r->add_option("-M,--truncation", rec.truncation)->capture_default_str();
  r->add_option("--tail-tol", rec.tail_tol)->capture_default_str();
  r->add_flag("--allow-nonconverged", rec.allow_nonconverged);
  r->add_option("--jobs", rec.jobs, "worker threads for noise averaging (0 = all cores)")->capture_default_str();
  r->add_option("-o,--out", rec.out);

  detail::SweepArgs sw;
  auto* w = app.add_subcommand("sweep", "smoothing or noise sweep on a benchmark case");
  w->add_option("kind", sw.kind, "smoothing or noise")->required();
  w->add_option("--model", sw.model)->capture_default_str();
  w->add_option("--y", sw.ys, "comma-separated smoothing weights")->capture_default_str();
  w->add_option("--delta", sw.deltas, "comma-separated noise levels (noise sweep)")->capture_default_str();
  w->add_option("--repeats", sw.repeats)->capture_default_str();
  w->add_option("--xmax", sw.xmax)->capture_default_str();
  w->add_option("--count", sw.count)->capture_default_str();
  w->add_option("--shots", sw.shots)->capture_default_str();
  w->add_option("--seed", sw.seed)->capture_default_str();
  w->add_option("--jobs", sw.jobs)->capture_default_str();
  w->add_option("-o,--out", sw.out);

  detail::AnalyzeArgs an;
  auto* z = app.add_subcommand("analyze", "Wigner profiles, fidelities, relative error");
  z->add_option("--what", an.what, "wigner, fidelity or relerr")->required();
  z->add_option("--povm", an.povms, "POVM CSV (repeat for two files)")->required();
  z->add_option("--element", an.element, "outcome index for wigner (default all)");
  z->add_option("--rmax", an.rmax)->capture_default_str();
  z->add_option("--points", an.points)->capture_default_str();
  z->add_option("-o,--out", an.out);

  detail::VerifyArgs ver;
  auto* v = app.add_subcommand("verify-entanglement", "negativity lower bound from joint data");
  v->add_option("--data", ver.data, "JointData JSON")->required();
  v->add_option("--tol", ver.tol)->capture_default_str();
  v->add_option("-o,--out", ver.out);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kInvalid;
  }

  try {
    if (*s) return detail::cmd_simulate(sim, out);
    if (*r) return detail::cmd_reconstruct(rec, out, err);
    if (*w) return detail::cmd_sweep(sw, out);
    if (*z) return detail::cmd_analyze(an, out);
    if (*v) return detail::cmd_verify(ver, out);
  } catch (const NotConverged& e) {
    err << "error: " << e.what() << "\n";
    return kNotConverged;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const TruncationInsufficient& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const InconsistentData& e) {
    err << "error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kFailure;
  }
  return kFailure;
}

} // namespace qdt::cli
