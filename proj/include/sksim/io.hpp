// File formats: a one-line JSON header followed by raw little-endian float64
// arrays (snapshots, kernel tables), and small CSV helpers. The same
// header+blob layout serves particle snapshots, density snapshots and kernel
// tables.
#pragma once

#include <json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "sksim/grid.hpp"
#include "sksim/kernel_table.hpp"
#include "sksim/particles.hpp"

namespace sksim {

struct IoError : std::runtime_error {
  std::string path;
  IoError(const std::string& msg, std::string p) : std::runtime_error(msg + ": " + p), path(std::move(p)) {}
};

namespace detail {

inline void write_doubles(std::ofstream& os, const double* data, std::size_t count) {
  // Little-endian layout; this toolkit targets LE hosts.
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

inline void read_doubles(std::ifstream& is, double* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * sizeof(double)));
}

inline void write_header_blob(const std::string& path, const nlohmann::json& header,
                              const std::vector<const std::vector<double>*>& blobs) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing", path);
  os << header.dump() << '\n';
  for (const auto* b : blobs) write_doubles(os, b->data(), b->size());
  if (!os) throw IoError("write failed", path);
}

inline nlohmann::json read_header(std::ifstream& is, const std::string& path) {
  std::string line;
  if (!std::getline(is, line)) throw IoError("missing header", path);
  return nlohmann::json::parse(line);
}

}  // namespace detail

// --- particle snapshots ----------------------------------------------------

template <int D>
inline void write_snapshot(const std::string& path, const ParticleEnsemble<D>& ens) {
  nlohmann::json header{{"kind", "particles"},
                        {"t", ens.t},
                        {"N", ens.size()},
                        {"d", D},
                        {"epsilon", ens.epsilon},
                        {"box", ens.box.half_width}};
  std::vector<double> flat(static_cast<std::size_t>(ens.size()) * D);
  for (int i = 0; i < ens.size(); ++i) {
    const Vec<D> x = ens.absolute(i);
    for (int a = 0; a < D; ++a) flat[static_cast<std::size_t>(i) * D + a] = x[a];
  }
  detail::write_header_blob(path, header, {&flat});
}

template <int D>
inline ParticleEnsemble<D> read_snapshot(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open", path);
  const nlohmann::json h = detail::read_header(is, path);
  if (h.at("d").get<int>() != D) throw IoError("dimension mismatch", path);
  ParticleEnsemble<D> ens;
  ens.t = h.at("t").get<double>();
  ens.epsilon = h.at("epsilon").get<double>();
  ens.box.half_width = h.at("box").get<double>();
  const int N = h.at("N").get<int>();
  ens.pos.resize(N);
  ens.stream_ids.resize(N);
  std::vector<double> flat(static_cast<std::size_t>(N) * D);
  detail::read_doubles(is, flat.data(), flat.size());
  if (!is) throw IoError("truncated payload", path);
  for (int i = 0; i < N; ++i) {
    ens.stream_ids[i] = 1 + static_cast<uint32_t>(i);
    for (int a = 0; a < D; ++a) ens.pos[i][a] = flat[static_cast<std::size_t>(i) * D + a];
  }
  return ens;
}

// --- density snapshots -------------------------------------------------------

template <int D>
inline void write_density(const std::string& path, const DensityField<D>& rho) {
  nlohmann::json header{{"kind", "density"},
                        {"t", rho.t},
                        {"n", rho.grid.n},
                        {"d", D},
                        {"box", rho.grid.half_width}};
  detail::write_header_blob(path, header, {&rho.values});
}

template <int D>
inline DensityField<D> read_density(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open", path);
  const nlohmann::json h = detail::read_header(is, path);
  if (h.at("d").get<int>() != D) throw IoError("dimension mismatch", path);
  GridSpec<D> grid{h.at("n").get<int>(), h.at("box").get<double>()};
  DensityField<D> rho(grid, h.at("t").get<double>());
  detail::read_doubles(is, rho.values.data(), rho.values.size());
  if (!is) throw IoError("truncated payload", path);
  return rho;
}

// --- kernel tables -----------------------------------------------------------

inline void write_kernel_table(const std::string& path, const KernelTable& table) {
  nlohmann::json header{{"kind", "kernel-table"},
                        {"epsilon", table.epsilon},
                        {"d", table.dim},
                        {"r_cut", table.r_cut},
                        {"samples", table.r_samples.size()},
                        {"tail_bound", table.tail_bound}};
  detail::write_header_blob(path, header, {&table.r_samples, &table.f_samples});
}

inline KernelTable read_kernel_table(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open", path);
  const nlohmann::json h = detail::read_header(is, path);
  KernelTable table;
  table.epsilon = h.at("epsilon").get<double>();
  table.dim = h.at("d").get<int>();
  table.r_cut = h.at("r_cut").get<double>();
  table.tail_bound = h.at("tail_bound").get<double>();
  const std::size_t n = h.at("samples").get<std::size_t>();
  table.r_samples.resize(n);
  table.f_samples.resize(n);
  detail::read_doubles(is, table.r_samples.data(), n);
  detail::read_doubles(is, table.f_samples.data(), n);
  if (!is) throw IoError("truncated payload", path);
  table.finalize();
  return table;
}

// --- CSV ---------------------------------------------------------------------

class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns) : os_(path) {
    if (!os_) throw IoError("cannot open for writing", path);
    for (std::size_t i = 0; i < columns.size(); ++i)
      os_ << (i ? "," : "") << columns[i];
    os_ << '\n';
  }

  void row(const std::vector<double>& values) {
    char buf[32];
    for (std::size_t i = 0; i < values.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", values[i]);
      os_ << (i ? "," : "") << buf;
    }
    os_ << '\n';
  }

 private:
  std::ofstream os_;
};

}  // namespace sksim
