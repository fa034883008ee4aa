// Experiment orchestration: convergence sweeps over N with the eps(N)
// coupling, replica scheduling, weighted rate fits, and report emission.
#pragma once

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "sksim/config.hpp"
#include "sksim/coupling.hpp"
#include "sksim/io.hpp"

namespace sksim {

// Independent 64-bit sub-seed for replica scheduling.
inline uint64_t derive_seed(uint64_t seed_root, uint64_t index) {
  const auto b = philox::block(seed_root, index, 0x5eedu, purpose_tag(NoisePurpose::scratch, 0));
  return (static_cast<uint64_t>(b[0]) << 32) | b[1];
}

struct RateFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_stderr = 0.0;
};

// Weighted least squares of y against x; weights are inverse variances.
inline RateFit fit_rate(const std::vector<double>& x, const std::vector<double>& y,
                        const std::vector<double>& w) {
  if (x.size() < 3) throw std::invalid_argument("fit_rate: need at least 3 points");
  if (x.size() != y.size() || x.size() != w.size())
    throw std::invalid_argument("fit_rate: size mismatch");
  double sw = 0, sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(w[i] > 0.0)) throw std::invalid_argument("fit_rate: weights must be positive");
    sw += w[i];
    sx += w[i] * x[i];
    sy += w[i] * y[i];
    sxx += w[i] * x[i] * x[i];
    sxy += w[i] * x[i] * y[i];
  }
  const double det = sw * sxx - sx * sx;
  if (!(det > 1e-12 * sw * sxx))
    throw std::invalid_argument("fit_rate: degenerate design (x values coincide)");
  RateFit fit;
  fit.slope = (sw * sxy - sx * sy) / det;
  fit.intercept = (sxx * sy - sx * sxy) / det;
  fit.slope_stderr = std::sqrt(sw / det);
  return fit;
}

// Convenience for log-log fits of positive error means with standard errors.
inline RateFit fit_rate_loglog(const std::vector<double>& n_values,
                               const std::vector<double>& means,
                               const std::vector<double>& stderrs) {
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < n_values.size(); ++i) {
    if (!(means[i] > 0.0)) throw std::invalid_argument("fit_rate: nonpositive error mean");
    x.push_back(std::log(n_values[i]));
    y.push_back(std::log(means[i]));
    const double se_log = stderrs[i] > 0.0 ? stderrs[i] / means[i] : 1.0;
    w.push_back(1.0 / (se_log * se_log));
  }
  return fit_rate(x, y, w);
}

struct ReplicaRecord {
  int N = 0;
  int replica = 0;
  uint64_t seed = 0;
  double sup_coupling_error = 0.0;
  std::vector<double> sup_weak_errors;
  double sup_reg_gap = 0.0;
  bool blew_up = false;
  bool failed = false;
  std::string failure;
};

struct SweepAggregate {
  int N = 0;
  double epsilon = 0.0;
  int n_ok = 0;
  int n_flagged = 0;
  double mean_coupling = 0.0, stderr_coupling = 0.0;
  std::vector<double> mean_weak, stderr_weak;
  double mean_gap = 0.0, stderr_gap = 0.0;
};

struct FitResult {
  bool valid = false;
  bool degenerate = false;  // all-zero errors (e.g. chi = 0 sweeps)
  std::string note;
  RateFit fit;
};

struct ConvergenceReport {
  std::map<std::string, std::string> config_echo;
  std::string version = kToolkitVersion;
  uint64_t seed_root = 0;
  std::vector<std::string> phi_names;
  std::vector<ReplicaRecord> records;
  std::vector<SweepAggregate> aggregates;
  FitResult coupling_fit;
  std::vector<FitResult> weak_fits;
};

struct SweepAbort : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void mean_stderr(const std::vector<double>& v, double& mean, double& se) {
  mean = 0.0;
  se = 0.0;
  if (v.empty()) return;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  if (v.size() < 2) return;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size() - 1);
  se = std::sqrt(var / static_cast<double>(v.size()));
}

inline FitResult fit_over_aggregates(const std::vector<SweepAggregate>& aggs,
                                     const std::function<double(const SweepAggregate&)>& mean_of,
                                     const std::function<double(const SweepAggregate&)>& se_of) {
  FitResult out;
  std::vector<double> n, m, s;
  bool all_zero = true;
  for (const auto& a : aggs) {
    if (a.n_ok == 0) continue;
    n.push_back(a.N);
    m.push_back(mean_of(a));
    s.push_back(se_of(a));
    if (mean_of(a) > 1e-18) all_zero = false;
  }
  if (all_zero) {
    out.degenerate = true;
    out.note = "all replica means vanish; no rate to fit";
    return out;
  }
  if (n.size() < 3) {
    out.note = "fewer than 3 usable N values; no fit";
    return out;
  }
  try {
    out.fit = fit_rate_loglog(n, m, s);
    out.valid = true;
  } catch (const std::exception& e) {
    out.note = e.what();
  }
  return out;
}

}  // namespace detail

// Recompute aggregates and fits from the raw records (pure fold over sorted
// keys; deleting one replica record only moves that N's mean/stderr).
inline void aggregate_report(ConvergenceReport& report) {
  std::map<int, std::vector<const ReplicaRecord*>> by_n;
  for (const auto& r : report.records) by_n[r.N].push_back(&r);

  report.aggregates.clear();
  const std::size_t n_phi = report.phi_names.size();
  for (const auto& [N, rows] : by_n) {
    SweepAggregate agg;
    agg.N = N;
    auto eps_it = report.config_echo.find("derived.epsilon.N" + std::to_string(N));
    if (eps_it != report.config_echo.end())
      agg.epsilon = std::stod(eps_it->second);
    else if (report.config_echo.count("kernel.epsilon") &&
             report.config_echo.at("kernel.epsilon") != "auto")
      agg.epsilon = std::stod(report.config_echo.at("kernel.epsilon"));
    std::vector<double> coupling, gap;
    std::vector<std::vector<double>> weak(n_phi);
    for (const auto* r : rows) {
      if (r->failed || r->blew_up) {
        ++agg.n_flagged;
        continue;
      }
      ++agg.n_ok;
      coupling.push_back(r->sup_coupling_error);
      gap.push_back(r->sup_reg_gap);
      for (std::size_t q = 0; q < n_phi && q < r->sup_weak_errors.size(); ++q)
        weak[q].push_back(r->sup_weak_errors[q]);
    }
    detail::mean_stderr(coupling, agg.mean_coupling, agg.stderr_coupling);
    detail::mean_stderr(gap, agg.mean_gap, agg.stderr_gap);
    agg.mean_weak.resize(n_phi);
    agg.stderr_weak.resize(n_phi);
    for (std::size_t q = 0; q < n_phi; ++q)
      detail::mean_stderr(weak[q], agg.mean_weak[q], agg.stderr_weak[q]);
    report.aggregates.push_back(std::move(agg));
  }

  report.coupling_fit = detail::fit_over_aggregates(
      report.aggregates, [](const SweepAggregate& a) { return a.mean_coupling; },
      [](const SweepAggregate& a) { return a.stderr_coupling; });
  report.weak_fits.clear();
  for (std::size_t q = 0; q < n_phi; ++q) {
    report.weak_fits.push_back(detail::fit_over_aggregates(
        report.aggregates, [q](const SweepAggregate& a) { return a.mean_weak[q]; },
        [q](const SweepAggregate& a) { return a.stderr_weak[q]; }));
  }
}

template <int D>
inline InitialDensity<D> make_initial_density(const RunConfig& cfg) {
  if (cfg.init_kind == "gaussian") {
    Vec<D> mean = zero_vec<D>();
    for (int a = 0; a < D && a < static_cast<int>(cfg.init_mean.size()); ++a)
      mean[a] = cfg.init_mean[a];
    return InitialDensity<D>::isotropic_gaussian(mean, cfg.init_sigma);
  }
  if (cfg.init_kind == "mixture") {
    std::vector<GaussianComponent<D>> comps;
    for (std::size_t c = 0; c < cfg.mixture_means.size(); ++c) {
      GaussianComponent<D> comp;
      for (int a = 0; a < D && a < static_cast<int>(cfg.mixture_means[c].size()); ++a)
        comp.mean[a] = cfg.mixture_means[c][a];
      comp.sigma.fill(cfg.mixture_sigmas[c]);
      comp.weight = cfg.mixture_weights[c];
      comps.push_back(comp);
    }
    return InitialDensity<D>::mixture(std::move(comps));
  }
  return InitialDensity<D>::tabulated(read_density<D>(cfg.init_file));
}

// Full sweep: for every N and replica, a coupled run with eps(N); replica
// cells are dispatched to a worker pool and aggregated as a deterministic
// fold. Per-replica failures are recorded; an N where more than half the
// replicas fail aborts the sweep.
template <int D>
inline ConvergenceReport run_convergence_sweep(const RunConfig& cfg) {
  ConvergenceReport report;
  report.config_echo = cfg.echo;
  report.seed_root = cfg.seed;
  const GridSpec<D> grid{cfg.grid_n, cfg.box_half_width};
  const InitialDensity<D> init = make_initial_density<D>(cfg);
  const CoefficientField field = make_field(cfg.field);
  for (const auto& phi : shipped_test_functions<D>(cfg.box_half_width))
    report.phi_names.push_back(phi.name);

  for (std::size_t ni = 0; ni < cfg.N_list.size(); ++ni) {
    const int N = cfg.N_list[ni];
    const double eps = cfg.epsilon_for(N);
    const KernelTable table = build_kernel_table(eps, D, cfg.kernel_resolution);

    std::vector<ReplicaRecord> cell_records(cfg.replicas);
    std::atomic<int> next{0};
    auto worker = [&]() {
      while (true) {
        const int m = next.fetch_add(1);
        if (m >= cfg.replicas) return;
        ReplicaRecord rec;
        rec.N = N;
        rec.replica = m;
        rec.seed = derive_seed(cfg.seed, ni * 1000003ull + static_cast<uint64_t>(m));
        try {
          CoupledRunParams<D> params;
          params.N = N;
          params.chi = cfg.chi;
          params.T = cfg.horizon;
          params.dt = cfg.dt;
          params.error_stride = cfg.error_stride;
          params.cubic_interp = cfg.cubic_interp;
          params.seed = rec.seed;
          params.kde_bandwidth = cfg.kde_bandwidth;
          const CoupledTimeSeries ts = run_coupled<D>(params, init, field, table, grid);
          rec.sup_coupling_error = ts.sup_coupling_err;
          rec.sup_weak_errors = ts.sup_weak_err;
          rec.sup_reg_gap = ts.sup_reg_gap;
          rec.blew_up = ts.blew_up;
        } catch (const std::exception& e) {
          rec.failed = true;
          rec.failure = e.what();
        }
        cell_records[m] = std::move(rec);
      }
    };
    const int n_workers = std::max(1, std::min(cfg.threads, cfg.replicas));
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();

    int n_failed = 0;
    for (const auto& rec : cell_records) {
      if (rec.failed || rec.blew_up) ++n_failed;
      report.records.push_back(rec);
    }
    if (2 * n_failed > cfg.replicas) {
      std::ostringstream os;
      os << "sweep aborted: " << n_failed << "/" << cfg.replicas << " replicas failed at N=" << N;
      throw SweepAbort(os.str());
    }
  }

  aggregate_report(report);
  return report;
}

// --- report emission ---------------------------------------------------------

inline nlohmann::json report_to_json(const ConvergenceReport& report, bool with_meta,
                                     const std::string& timestamp = "") {
  nlohmann::json j;
  j["version"] = report.version;
  j["seed_root"] = report.seed_root;
  j["config"] = report.config_echo;
  j["phi_names"] = report.phi_names;
  auto& recs = j["records"] = nlohmann::json::array();
  for (const auto& r : report.records) {
    recs.push_back({{"N", r.N},
                    {"replica", r.replica},
                    {"seed", r.seed},
                    {"sup_coupling_error", r.sup_coupling_error},
                    {"sup_weak_errors", r.sup_weak_errors},
                    {"sup_reg_gap", r.sup_reg_gap},
                    {"blew_up", r.blew_up},
                    {"failed", r.failed},
                    {"failure", r.failure}});
  }
  auto& aggs = j["aggregates"] = nlohmann::json::array();
  for (const auto& a : report.aggregates) {
    aggs.push_back({{"N", a.N},
                    {"epsilon", a.epsilon},
                    {"n_ok", a.n_ok},
                    {"n_flagged", a.n_flagged},
                    {"mean_coupling", a.mean_coupling},
                    {"stderr_coupling", a.stderr_coupling},
                    {"mean_weak", a.mean_weak},
                    {"stderr_weak", a.stderr_weak},
                    {"mean_gap", a.mean_gap},
                    {"stderr_gap", a.stderr_gap}});
  }
  auto fit_json = [](const FitResult& f) {
    return nlohmann::json{{"valid", f.valid},
                          {"degenerate", f.degenerate},
                          {"note", f.note},
                          {"slope", f.fit.slope},
                          {"intercept", f.fit.intercept},
                          {"slope_stderr", f.fit.slope_stderr}};
  };
  j["fits"]["coupling"] = fit_json(report.coupling_fit);
  for (std::size_t q = 0; q < report.weak_fits.size(); ++q)
    j["fits"]["weak_" + report.phi_names[q]] = fit_json(report.weak_fits[q]);
  if (with_meta) j["meta"] = {{"timestamp", timestamp}};
  return j;
}

inline ConvergenceReport report_from_json(const nlohmann::json& j) {
  ConvergenceReport report;
  report.version = j.at("version").get<std::string>();
  report.seed_root = j.at("seed_root").get<uint64_t>();
  report.config_echo = j.at("config").get<std::map<std::string, std::string>>();
  report.phi_names = j.at("phi_names").get<std::vector<std::string>>();
  for (const auto& r : j.at("records")) {
    ReplicaRecord rec;
    rec.N = r.at("N").get<int>();
    rec.replica = r.at("replica").get<int>();
    rec.seed = r.at("seed").get<uint64_t>();
    rec.sup_coupling_error = r.at("sup_coupling_error").get<double>();
    rec.sup_weak_errors = r.at("sup_weak_errors").get<std::vector<double>>();
    rec.sup_reg_gap = r.at("sup_reg_gap").get<double>();
    rec.blew_up = r.at("blew_up").get<bool>();
    rec.failed = r.at("failed").get<bool>();
    rec.failure = r.at("failure").get<std::string>();
    report.records.push_back(std::move(rec));
  }
  aggregate_report(report);
  return report;
}

inline void emit_report(const ConvergenceReport& report, const std::string& dir,
                        const std::string& timestamp = "") {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory", dir);

  {
    std::ofstream os(dir + "/report.json");
    if (!os) throw IoError("cannot open for writing", dir + "/report.json");
    os << report_to_json(report, true, timestamp).dump(2) << '\n';
  }
  {
    std::vector<std::string> cols{"N", "epsilon", "n_ok", "n_flagged",
                                  "mean_coupling", "stderr_coupling",
                                  "mean_gap", "stderr_gap"};
    for (const auto& name : report.phi_names) {
      cols.push_back("mean_weak_" + name);
      cols.push_back("stderr_weak_" + name);
    }
    CsvWriter csv(dir + "/summary.csv", cols);
    for (const auto& a : report.aggregates) {
      std::vector<double> row{static_cast<double>(a.N), a.epsilon,
                              static_cast<double>(a.n_ok), static_cast<double>(a.n_flagged),
                              a.mean_coupling, a.stderr_coupling, a.mean_gap, a.stderr_gap};
      for (std::size_t q = 0; q < report.phi_names.size(); ++q) {
        row.push_back(a.mean_weak[q]);
        row.push_back(a.stderr_weak[q]);
      }
      csv.row(row);
    }
  }
  auto plot = [&](const std::string& name, const std::function<double(const SweepAggregate&)>& m,
                  const std::function<double(const SweepAggregate&)>& s) {
    CsvWriter csv(dir + "/plotdata_" + name + ".csv", {"log_N", "log_error", "stderr_log"});
    for (const auto& a : report.aggregates) {
      if (a.n_ok == 0 || !(m(a) > 0.0)) continue;
      csv.row({std::log(static_cast<double>(a.N)), std::log(m(a)),
               s(a) > 0.0 ? s(a) / m(a) : 0.0});
    }
  };
  plot("coupling", [](const SweepAggregate& a) { return a.mean_coupling; },
       [](const SweepAggregate& a) { return a.stderr_coupling; });
  for (std::size_t q = 0; q < report.phi_names.size(); ++q) {
    plot("weak_" + report.phi_names[q],
         [q](const SweepAggregate& a) { return a.mean_weak[q]; },
         [q](const SweepAggregate& a) { return a.stderr_weak[q]; });
  }
}

inline ConvergenceReport read_report(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open", path);
  nlohmann::json j;
  is >> j;
  return report_from_json(j);
}

// Shared-W pooled conditional-density experiment: one RSPDE solve, many
// mean-field replica clouds advanced against it in lockstep, then a pooled
// KDE against the density at the final time.
template <int D>
struct ConditionalDensityResult {
  double l1_base = 0.0;
  double l1_quadrupled = 0.0;
  int pooled_base = 0;
  int pooled_quadrupled = 0;
};

template <int D>
inline ConditionalDensityResult<D> conditional_density_experiment(
    const RunConfig& cfg, int N_per_replica, int replicas_base, int replicas_total) {
  const GridSpec<D> grid{cfg.grid_n, cfg.box_half_width};
  const InitialDensity<D> init = make_initial_density<D>(cfg);
  const CoefficientField field = make_field(cfg.field);
  const double eps = cfg.epsilon_auto ? cfg.epsilon_for(N_per_replica) : cfg.epsilon;
  const KernelTable table = build_kernel_table(eps, D, cfg.kernel_resolution);
  const PeriodicBox<D> box{cfg.box_half_width};

  std::vector<ParticleEnsemble<D>> replicas;
  for (int m = 0; m < replicas_total; ++m)
    replicas.push_back(sample_initial<D>(init, N_per_replica, cfg.seed, box, eps,
                                         1 + static_cast<uint32_t>(m) * N_per_replica));

  DensityField<D> rho_eps(grid);
  {
    std::array<int, D> idx{};
    for (std::size_t m = 0; m < rho_eps.values.size(); ++m) {
      std::size_t rest = m;
      for (int b = D - 1; b >= 0; --b) {
        idx[b] = static_cast<int>(rest % grid.n);
        rest /= grid.n;
      }
      Vec<D> x;
      for (int b = 0; b < D; ++b) x[b] = grid.coord(idx[b]);
      rho_eps.values[m] = init.density(x);
    }
    rho_eps.scale(1.0 / rho_eps.mass());
  }

  SpdeSolver<D> solver(grid, &field, cfg.chi, DriftMode::regularized, &table);
  const int n_steps = static_cast<int>(std::lround(cfg.horizon / cfg.dt));
  const int dp = field.dprime();
  const WienerPath w = sample_increments(cfg.seed, 0, n_steps, cfg.dt, dp);

  std::vector<double> dB;
  for (int k = 0; k < n_steps; ++k) {
    if (!solver.step(rho_eps, w.row(k), cfg.dt))
      throw std::runtime_error("conditional density experiment: SPDE blow-up");
    const VectorField<D>* drift = cfg.chi != 0.0 ? &solver.last_drift() : nullptr;
    for (auto& Y : replicas) {
      draw_idiosyncratic(Y, dp, static_cast<uint64_t>(k), cfg.dt, dB);
      mean_field_step(Y, drift, field, w.row(k), dB.data(), cfg.dt, cfg.cubic_interp);
    }
  }

  ConditionalDensityResult<D> out;
  std::vector<const ParticleEnsemble<D>*> base, all;
  for (int m = 0; m < replicas_total; ++m) {
    if (m < replicas_base) base.push_back(&replicas[m]);
    all.push_back(&replicas[m]);
  }
  out.pooled_base = replicas_base * N_per_replica;
  out.pooled_quadrupled = replicas_total * N_per_replica;
  out.l1_base = conditional_density_check<D>(base, rho_eps, cfg.kde_bandwidth);
  out.l1_quadrupled = conditional_density_check<D>(all, rho_eps, cfg.kde_bandwidth);
  return out;
}

}  // namespace sksim
