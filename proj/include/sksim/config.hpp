// Run configuration: flat "key = value" text files with dotted sections.
// Parsing materializes every derived quantity (epsilon per sweep N, stability
// guards) and echoes all defaults; validation reports every violation, not
// only the first.
#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sksim/fields.hpp"

namespace sksim {

inline constexpr const char* kToolkitVersion = "0.1.0";

struct ConfigError : std::runtime_error {
  std::vector<std::string> violations;
  explicit ConfigError(std::vector<std::string> v)
      : std::runtime_error(join(v)), violations(std::move(v)) {}
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "config rejected:";
    for (const auto& e : v) s += "\n  - " + e;
    return s;
  }
};

struct RunConfig {
  int dim = 2;
  double box_half_width = 8.0;
  int grid_n = 256;
  double dt = 2.5e-4;
  double horizon = 0.5;
  double chi = 1.0;
  uint64_t seed = 42;
  int threads = 1;
  std::string out_dir = "out";

  int kernel_resolution = 512;
  bool epsilon_auto = true;
  double epsilon = 0.0;  // explicit value when !epsilon_auto

  double delta = 0.4;
  std::vector<int> N_list{256, 1024, 4096};
  int replicas = 20;

  FieldSpec field;

  std::string init_kind = "gaussian";
  std::vector<double> init_mean;
  double init_sigma = 1.0;
  std::string init_file;
  std::vector<std::vector<double>> mixture_means;
  std::vector<double> mixture_sigmas, mixture_weights;

  int particles_N = 1024;
  int series_stride = 10;
  int snapshot_stride = 0;
  int error_stride = 10;
  int density_checkpoints = 0;
  bool cubic_interp = false;
  double kde_bandwidth = 0.0;  // 0 = Silverman

  // echo of every key after defaults were filled in
  std::map<std::string, std::string> echo;

  double grid_dx() const { return 2.0 * box_half_width / grid_n; }

  // epsilon for a sweep size N: eps^{-d} = delta ln N, taken with equality.
  double epsilon_for(int N) const {
    if (!epsilon_auto) return epsilon;
    return std::pow(delta * std::log(static_cast<double>(N)), -1.0 / dim);
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  return out;
}

}  // namespace detail

inline const std::vector<std::string>& known_config_keys() {
  static const std::vector<std::string> keys = {
      "dim", "box.half_width", "grid.n", "time.dt", "time.horizon", "chi", "seed",
      "threads", "out",
      "kernel.resolution", "kernel.epsilon",
      "sweep.delta", "sweep.N_list", "sweep.replicas",
      "field.kind", "field.dprime", "field.nu.scale", "field.sigma.scale",
      "field.sigma.mod", "field.sigma.omega", "field.sigma.amplitude", "field.sigma.mode",
      "init.kind", "init.mean", "init.sigma", "init.file", "init.means", "init.sigmas",
      "init.weights",
      "particles.N", "observe.series_stride", "observe.snapshot_stride",
      "coupling.error_stride", "coupling.density_checkpoints", "coupling.interp",
      "kde.bandwidth"};
  return keys;
}

// Parse without validating; every recognized key lands in cfg and the echo.
inline RunConfig parse_config_text(const std::map<std::string, std::string>& kv,
                                   std::vector<std::string>& violations) {
  RunConfig cfg;
  const auto& known = known_config_keys();
  for (const auto& [key, value] : kv) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      violations.push_back("unknown key: " + key);
  }

  auto get = [&](const char* key) -> const std::string* {
    auto it = kv.find(key);
    return it == kv.end() ? nullptr : &it->second;
  };
  auto get_double = [&](const char* key, double& dst) {
    if (const auto* v = get(key)) {
      try {
        dst = std::stod(*v);
      } catch (...) {
        violations.push_back(std::string(key) + ": not a number: " + *v);
      }
    }
  };
  auto get_int = [&](const char* key, int& dst) {
    if (const auto* v = get(key)) {
      try {
        dst = std::stoi(*v);
      } catch (...) {
        violations.push_back(std::string(key) + ": not an integer: " + *v);
      }
    }
  };

  get_int("dim", cfg.dim);
  get_double("box.half_width", cfg.box_half_width);
  get_int("grid.n", cfg.grid_n);
  get_double("time.dt", cfg.dt);
  get_double("time.horizon", cfg.horizon);
  get_double("chi", cfg.chi);
  if (const auto* v = get("seed")) {
    try {
      cfg.seed = std::stoull(*v);
    } catch (...) {
      violations.push_back("seed: not an integer: " + *v);
    }
  }
  get_int("threads", cfg.threads);
  if (const auto* v = get("out")) cfg.out_dir = *v;

  get_int("kernel.resolution", cfg.kernel_resolution);
  if (const auto* v = get("kernel.epsilon")) {
    if (*v == "auto") {
      cfg.epsilon_auto = true;
    } else {
      cfg.epsilon_auto = false;
      try {
        cfg.epsilon = std::stod(*v);
      } catch (...) {
        violations.push_back("kernel.epsilon: expected 'auto' or a number: " + *v);
      }
    }
  }

  get_double("sweep.delta", cfg.delta);
  if (const auto* v = get("sweep.N_list")) {
    cfg.N_list.clear();
    for (const auto& item : detail::split(*v, ',')) {
      try {
        cfg.N_list.push_back(std::stoi(item));
      } catch (...) {
        violations.push_back("sweep.N_list: not an integer: " + item);
      }
    }
  }
  get_int("sweep.replicas", cfg.replicas);

  cfg.field.dim = cfg.dim;
  cfg.field.dprime = cfg.dim;
  cfg.field.box_half_width = cfg.box_half_width;
  cfg.field.horizon = cfg.horizon;
  if (const auto* v = get("field.kind")) {
    try {
      cfg.field.kind = field_kind_from_name(*v);
    } catch (const std::exception& e) {
      violations.push_back(e.what());
    }
  }
  get_int("field.dprime", cfg.field.dprime);
  get_double("field.nu.scale", cfg.field.nu_scale);
  get_double("field.sigma.scale", cfg.field.sigma_scale);
  get_double("field.sigma.mod", cfg.field.sigma_mod);
  get_double("field.sigma.omega", cfg.field.sigma_omega);
  get_double("field.sigma.amplitude", cfg.field.shear_amplitude);
  get_int("field.sigma.mode", cfg.field.shear_mode);

  if (const auto* v = get("init.kind")) cfg.init_kind = *v;
  if (const auto* v = get("init.mean")) {
    cfg.init_mean.clear();
    for (const auto& item : detail::split(*v, ','))
      try {
        cfg.init_mean.push_back(std::stod(item));
      } catch (...) {
        violations.push_back("init.mean: not a number: " + item);
      }
  }
  get_double("init.sigma", cfg.init_sigma);
  if (const auto* v = get("init.file")) cfg.init_file = *v;
  if (const auto* v = get("init.means")) {
    cfg.mixture_means.clear();
    for (const auto& point : detail::split(*v, ';')) {
      std::vector<double> p;
      for (const auto& item : detail::split(point, ','))
        try {
          p.push_back(std::stod(item));
        } catch (...) {
          violations.push_back("init.means: not a number: " + item);
        }
      cfg.mixture_means.push_back(std::move(p));
    }
  }
  if (const auto* v = get("init.sigmas")) {
    cfg.mixture_sigmas.clear();
    for (const auto& item : detail::split(*v, ','))
      try {
        cfg.mixture_sigmas.push_back(std::stod(item));
      } catch (...) {
        violations.push_back("init.sigmas: not a number: " + item);
      }
  }
  if (const auto* v = get("init.weights")) {
    cfg.mixture_weights.clear();
    for (const auto& item : detail::split(*v, ','))
      try {
        cfg.mixture_weights.push_back(std::stod(item));
      } catch (...) {
        violations.push_back("init.weights: not a number: " + item);
      }
  }

  get_int("particles.N", cfg.particles_N);
  get_int("observe.series_stride", cfg.series_stride);
  get_int("observe.snapshot_stride", cfg.snapshot_stride);
  get_int("coupling.error_stride", cfg.error_stride);
  get_int("coupling.density_checkpoints", cfg.density_checkpoints);
  if (const auto* v = get("coupling.interp")) {
    if (*v == "linear")
      cfg.cubic_interp = false;
    else if (*v == "cubic")
      cfg.cubic_interp = true;
    else
      violations.push_back("coupling.interp: expected linear or cubic: " + *v);
  }
  if (const auto* v = get("kde.bandwidth")) {
    if (*v == "auto")
      cfg.kde_bandwidth = 0.0;
    else
      get_double("kde.bandwidth", cfg.kde_bandwidth);
  }
  return cfg;
}

// Stability and consistency validation; appends one entry per violation.
inline void validate_config(const RunConfig& cfg, std::vector<std::string>& violations) {
  auto reject = [&](const std::string& msg) { violations.push_back(msg); };

  if (cfg.dim != 2 && cfg.dim != 3) reject("dim must be 2 or 3");
  if (!(cfg.box_half_width > 0.0)) reject("box.half_width must be positive");
  if (cfg.grid_n < 8) reject("grid.n must be >= 8");
  if (!(cfg.dt > 0.0)) reject("time.dt must be positive");
  if (!(cfg.horizon > 0.0)) reject("time.horizon must be positive");
  if (cfg.chi < 0.0) reject("chi must be nonnegative");
  if (cfg.kernel_resolution < 64) reject("kernel.resolution must be >= 64");
  if (cfg.replicas < 1) reject("sweep.replicas must be >= 1");
  if (!(cfg.delta > 0.0) || cfg.delta >= 1.0) reject("sweep.delta must lie in (0, 1)");
  if (cfg.field.dprime < 1 || cfg.field.dprime > 3) reject("field.dprime must be in {1,2,3}");
  if (cfg.threads < 1) reject("threads must be >= 1");
  if (cfg.error_stride < 1) reject("coupling.error_stride must be >= 1");
  if (cfg.series_stride < 1) reject("observe.series_stride must be >= 1");
  for (int N : cfg.N_list)
    if (N < 2) reject("sweep.N_list entries must be >= 2");
  if (cfg.particles_N < 2) reject("particles.N must be >= 2");

  const double steps = cfg.horizon / cfg.dt;
  if (std::abs(steps - std::lround(steps)) > 1e-9 * std::max(1.0, steps))
    reject("time.horizon must be an integral multiple of time.dt");

  // kernel resolvability on the grid: eps >= 2 dx for every sweep N
  const double dx = cfg.grid_dx();
  auto check_eps = [&](double eps, const std::string& label) {
    if (!(eps > 0.0)) {
      reject(label + ": epsilon must be positive");
      return;
    }
    if (eps < 2.0 * dx) {
      std::ostringstream os;
      os << label << ": epsilon = " << eps << " < 2 dx = " << 2.0 * dx
         << " (kernel unresolvable on the grid)";
      reject(os.str());
    }
    // particle stepping stability: dt chi max|F| <= 0.1 eps, with the
    // empirical force bound max|F| ~ 0.25 eps^{1-d}
    const double max_force = 0.25 * std::pow(eps, 1 - cfg.dim);
    if (cfg.dt * cfg.chi * max_force > 0.1 * eps) {
      std::ostringstream os;
      os << label << ": dt chi max|F| = " << cfg.dt * cfg.chi * max_force << " exceeds 0.1 eps = "
         << 0.1 * eps << " (particle drift stability)";
      reject(os.str());
    }
  };
  if (cfg.epsilon_auto) {
    for (int N : cfg.N_list) {
      std::ostringstream label;
      label << "sweep N=" << N;
      check_eps(cfg.epsilon_for(N), label.str());
    }
  } else {
    check_eps(cfg.epsilon, "kernel.epsilon");
  }

  // grid stepping stability with the documented 0.5 safety factor
  const double a_max = cfg.field.nu_scale * cfg.field.nu_scale +
                       std::pow(std::abs(cfg.field.sigma_scale) * (1.0 + std::abs(cfg.field.sigma_mod)), 2) +
                       (cfg.field.kind == FieldKind::shear
                            ? cfg.field.shear_amplitude * cfg.field.shear_amplitude
                            : 0.0);
  const bool explicit_diffusion =
      cfg.field.kind == FieldKind::shear || cfg.field.kind == FieldKind::tabulated;
  if (explicit_diffusion) {
    const double bound = 0.5 * dx * dx / (2.0 * cfg.dim * a_max);
    if (cfg.dt > bound) {
      std::ostringstream os;
      os << "time.dt = " << cfg.dt << " exceeds the explicit diffusion bound 0.5 dx^2/(2 d max a) = "
         << bound;
      reject(os.str());
    }
  }
  // advective CFL: |u| <= chi * pi/2 * peak density estimate
  const double peak = cfg.init_kind == "gaussian"
                          ? 1.0 / std::pow(2.0 * M_PI * cfg.init_sigma * cfg.init_sigma,
                                           cfg.dim / 2.0)
                          : 1.0;
  const double u_est = cfg.chi * 0.5 * M_PI * std::max(peak, 0.1);
  if (u_est > 0.0) {
    const double bound = 0.5 * dx / (2.0 * u_est);
    if (cfg.dt > bound) {
      std::ostringstream os;
      os << "time.dt = " << cfg.dt << " exceeds the advective bound 0.5 dx/(2 chi max|u|) = "
         << bound;
      reject(os.str());
    }
  }
  const double sigma_max =
      std::max(std::abs(cfg.field.sigma_scale) * (1.0 + std::abs(cfg.field.sigma_mod)),
               cfg.field.kind == FieldKind::shear ? cfg.field.shear_amplitude : 0.0);
  if (sigma_max > 0.0) {
    const double bound = std::pow(0.5 * dx / (3.0 * sigma_max), 2);
    if (cfg.dt > bound) {
      std::ostringstream os;
      os << "time.dt = " << cfg.dt << " exceeds the noise transport bound (0.5 dx / 3 sigma)^2 = "
         << bound;
      reject(os.str());
    }
  }

  if (cfg.init_kind != "gaussian" && cfg.init_kind != "mixture" && cfg.init_kind != "tabulated")
    reject("init.kind must be gaussian, mixture or tabulated");
  if (cfg.init_kind == "tabulated" && cfg.init_file.empty())
    reject("init.kind = tabulated requires init.file");
  if (cfg.init_kind == "mixture") {
    if (cfg.mixture_means.empty()) reject("init.kind = mixture requires init.means");
    if (cfg.mixture_means.size() != cfg.mixture_sigmas.size() ||
        cfg.mixture_means.size() != cfg.mixture_weights.size())
      reject("init.means, init.sigmas, init.weights must have matching lengths");
  }
}

inline void fill_echo(RunConfig& cfg) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  cfg.echo["dim"] = std::to_string(cfg.dim);
  cfg.echo["box.half_width"] = num(cfg.box_half_width);
  cfg.echo["grid.n"] = std::to_string(cfg.grid_n);
  cfg.echo["time.dt"] = num(cfg.dt);
  cfg.echo["time.horizon"] = num(cfg.horizon);
  cfg.echo["chi"] = num(cfg.chi);
  cfg.echo["seed"] = std::to_string(cfg.seed);
  cfg.echo["threads"] = std::to_string(cfg.threads);
  cfg.echo["out"] = cfg.out_dir;
  cfg.echo["kernel.resolution"] = std::to_string(cfg.kernel_resolution);
  cfg.echo["kernel.epsilon"] = cfg.epsilon_auto ? "auto" : num(cfg.epsilon);
  if (cfg.epsilon_auto) {
    for (int N : cfg.N_list)
      cfg.echo["derived.epsilon.N" + std::to_string(N)] = num(cfg.epsilon_for(N));
  }
  cfg.echo["sweep.delta"] = num(cfg.delta);
  {
    std::string s;
    for (std::size_t i = 0; i < cfg.N_list.size(); ++i)
      s += (i ? "," : "") + std::to_string(cfg.N_list[i]);
    cfg.echo["sweep.N_list"] = s;
  }
  cfg.echo["sweep.replicas"] = std::to_string(cfg.replicas);
  cfg.echo["field.kind"] = field_kind_name(cfg.field.kind);
  cfg.echo["field.dprime"] = std::to_string(cfg.field.dprime);
  cfg.echo["field.nu.scale"] = num(cfg.field.nu_scale);
  cfg.echo["field.sigma.scale"] = num(cfg.field.sigma_scale);
  cfg.echo["field.sigma.mod"] = num(cfg.field.sigma_mod);
  cfg.echo["field.sigma.omega"] = num(cfg.field.sigma_omega);
  cfg.echo["field.sigma.amplitude"] = num(cfg.field.shear_amplitude);
  cfg.echo["field.sigma.mode"] = std::to_string(cfg.field.shear_mode);
  cfg.echo["init.kind"] = cfg.init_kind;
  cfg.echo["init.sigma"] = num(cfg.init_sigma);
  cfg.echo["particles.N"] = std::to_string(cfg.particles_N);
  cfg.echo["observe.series_stride"] = std::to_string(cfg.series_stride);
  cfg.echo["observe.snapshot_stride"] = std::to_string(cfg.snapshot_stride);
  cfg.echo["coupling.error_stride"] = std::to_string(cfg.error_stride);
  cfg.echo["coupling.density_checkpoints"] = std::to_string(cfg.density_checkpoints);
  cfg.echo["coupling.interp"] = cfg.cubic_interp ? "cubic" : "linear";
  cfg.echo["kde.bandwidth"] = cfg.kde_bandwidth > 0.0 ? num(cfg.kde_bandwidth) : "auto";
}

inline RunConfig parse_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError({"cannot open config file: " + path});
  std::map<std::string, std::string> kv;
  std::vector<std::string> violations;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      violations.push_back("line " + std::to_string(line_no) + ": expected key = value");
      continue;
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (kv.count(key))
      violations.push_back("duplicate key: " + key);
    else
      kv[key] = value;
  }
  RunConfig cfg = parse_config_text(kv, violations);
  validate_config(cfg, violations);
  if (!violations.empty()) throw ConfigError(violations);
  fill_echo(cfg);
  return cfg;
}

}  // namespace sksim
