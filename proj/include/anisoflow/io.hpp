#pragma once

#include <anisoflow/material.hpp>
#include <anisoflow/optimizer.hpp>

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace anisoflow {

/** File writers raise this on unwritable paths or malformed inputs. */
class IoError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Legacy VTK structured points
// ---------------------------------------------------------------------------

namespace detail {

/** Doubles print with %.9g: enough for any viewer, stable across runs. */
inline std::string fmt_g9(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", x);
  return buf;
}

/** Raw little-endian doubles for the binary flavor of the format. */
inline void put_binary(std::ostream& os, const double* data, int count) {
  os.write(reinterpret_cast<const char*>(data), count * sizeof(double));
  os << "\n";
}

inline void put_ascii(std::ostream& os, const double* data, int count,
                      int per_line) {
  for (int i = 0; i < count; ++i)
    os << fmt_g9(data[i]) << ((i + 1) % per_line == 0 ? "\n" : " ");
  if (count % per_line != 0) os << "\n";
}

inline void put_values(std::ostream& os, const std::vector<double>& data,
                       bool binary, int per_line) {
  if (binary)
    put_binary(os, data.data(), static_cast<int>(data.size()));
  else
    put_ascii(os, data.data(), static_cast<int>(data.size()), per_line);
}

}  // namespace detail

/**
 * Writes the solved field and the design as one legacy-VTK structured-points
 * file: nodal velocity vectors plus a speed scalar as point data, and the
 * per-cell design (rho, eps, lambda, an anisotropic-boundary flag, and the
 * cell normal) as cell data. 2D fields are padded with zero z components.
 * The binary flavor stores raw little-endian doubles; ASCII uses %.9g.
 * Output is deterministic given inputs.
 *
 * The anisotropic flag marks cells in the directional-penalty membership
 * set (eps below eps0 with rho above rho0), the same predicate the
 * regularizers use.
 */
template <int Dim>
void write_vtk(const GridSpec<Dim>& grid, const DesignField<Dim>& theta,
               const MaterialHyperparams& hp, const Eigen::VectorXd& v_full,
               const std::string& path, bool binary = false, double eps0 = 0.5,
               double rho0 = 0.5) {
  static_assert(Dim == 2 || Dim == 3);
  if (v_full.size() != grid.dof_count())
    throw IoError("field size does not match the grid");
  if (theta.size() != grid.cell_count())
    throw IoError("design size does not match the grid");

  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);

  const int n_nodes = grid.node_count();
  const int n_cells = grid.cell_count();
  const double h = grid.spacing();

  os << "# vtk DataFile Version 3.0\n";
  os << "anisoflow fields\n";
  os << (binary ? "BINARY\n" : "ASCII\n");
  os << "DATASET STRUCTURED_POINTS\n";
  os << "DIMENSIONS " << grid.cells[0] + 1 << " " << grid.cells[1] + 1 << " "
     << (Dim == 3 ? grid.cells[2] + 1 : 1) << "\n";
  os << "ORIGIN 0 0 0\n";
  os << "SPACING " << detail::fmt_g9(h) << " " << detail::fmt_g9(h) << " "
     << detail::fmt_g9(h) << "\n";

  // Node numbering is x-fastest, matching structured-points ordering.
  os << "POINT_DATA " << n_nodes << "\n";
  os << "VECTORS velocity double\n";
  std::vector<double> buf(static_cast<size_t>(n_nodes) * 3);
  for (int node = 0; node < n_nodes; ++node) {
    for (int d = 0; d < 3; ++d)
      buf[3 * node + d] = d < Dim ? v_full[grid.dof(node, d)] : 0.0;
  }
  detail::put_values(os, buf, binary, 3);

  os << "SCALARS speed double 1\n";
  os << "LOOKUP_TABLE default\n";
  buf.assign(n_nodes, 0.0);
  for (int node = 0; node < n_nodes; ++node) {
    double s2 = 0.0;
    for (int d = 0; d < Dim; ++d) {
      const double c = v_full[grid.dof(node, d)];
      s2 += c * c;
    }
    buf[node] = std::sqrt(s2);
  }
  detail::put_values(os, buf, binary, 9);

  os << "CELL_DATA " << n_cells << "\n";
  auto scalar_field = [&](const char* name, auto&& value) {
    os << "SCALARS " << name << " double 1\n";
    os << "LOOKUP_TABLE default\n";
    buf.resize(n_cells);
    for (int c = 0; c < n_cells; ++c) buf[c] = value(c);
    detail::put_values(os, buf, binary, 9);
  };
  scalar_field("rho", [&](int c) { return theta.rho[c]; });
  scalar_field("eps", [&](int c) { return theta.eps[c]; });
  scalar_field("lambda", [&](int c) {
    return lambda_interp(theta.rho[c], theta.eps[c], hp)[0];
  });
  scalar_field("anisotropic", [&](int c) {
    return theta.eps[c] < eps0 && theta.rho[c] > rho0 ? 1.0 : 0.0;
  });

  os << "VECTORS normal double\n";
  buf.assign(static_cast<size_t>(n_cells) * 3, 0.0);
  for (int c = 0; c < n_cells; ++c) {
    const auto frame =
        normal_from_alpha(Eigen::Matrix<double, 1, Dim - 1>(theta.alpha.row(c)));
    for (int d = 0; d < Dim; ++d) buf[3 * c + d] = frame.n[d];
  }
  detail::put_values(os, buf, binary, 3);

  if (!os) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// CSV loss history
// ---------------------------------------------------------------------------

/**
 * One CSV row per optimization iteration, %.17g throughout so values
 * round-trip bit-exactly; two runs from the same task and seed produce
 * byte-identical files.
 */
inline void write_history_csv(const std::vector<IterationRecord>& records,
                              const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << "iteration,L_f,L_c,L_d,L_a,total,V_iso,V_all,max_change\n";
  char buf[512];
  for (const auto& r : records) {
    std::snprintf(buf, sizeof(buf),
                  "%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  r.iteration, r.L_f, r.L_c, r.L_d, r.L_a, r.total, r.V_iso,
                  r.V_all, r.max_change);
    os << buf;
  }
  if (!os) throw IoError("write failed: " + path);
}

inline std::vector<IterationRecord> read_history_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  std::string line;
  if (!std::getline(is, line) ||
      line != "iteration,L_f,L_c,L_d,L_a,total,V_iso,V_all,max_change")
    throw IoError("not a loss-history CSV: " + path);
  std::vector<IterationRecord> records;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    IterationRecord r;
    const int got = std::sscanf(
        line.c_str(), "%d,%lg,%lg,%lg,%lg,%lg,%lg,%lg,%lg", &r.iteration, &r.L_f,
        &r.L_c, &r.L_d, &r.L_a, &r.total, &r.V_iso, &r.V_all, &r.max_change);
    if (got != 9) throw IoError("malformed CSV row: " + line);
    records.push_back(r);
  }
  return records;
}

// ---------------------------------------------------------------------------
// Design snapshots
// ---------------------------------------------------------------------------

/** Saves a design as JSON; values round-trip exactly (shortest-exact
 *  double serialization). */
template <int Dim>
void save_design(const DesignField<Dim>& theta, const std::string& path) {
  nlohmann::json j;
  j["dim"] = Dim;
  j["rho"] = std::vector<double>(theta.rho.data(), theta.rho.data() + theta.size());
  j["eps"] = std::vector<double>(theta.eps.data(), theta.eps.data() + theta.size());
  j["eps_upper"] = std::vector<double>(theta.eps_upper.data(),
                                       theta.eps_upper.data() + theta.size());
  auto alpha = nlohmann::json::array();
  for (int c = 0; c < theta.size(); ++c) {
    auto row = nlohmann::json::array();
    for (int k = 0; k < Dim - 1; ++k) row.push_back(theta.alpha(c, k));
    alpha.push_back(std::move(row));
  }
  j["alpha"] = std::move(alpha);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open for writing: " + path);
  os << j.dump(1) << "\n";
  if (!os) throw IoError("write failed: " + path);
}

template <int Dim>
DesignField<Dim> load_design(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open for reading: " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const std::exception& e) {
    throw IoError(std::string("design file is not valid JSON: ") + e.what());
  }
  if (j.value("dim", 0) != Dim) throw IoError("design dimension mismatch");
  const auto rho = j.at("rho").get<std::vector<double>>();
  const auto eps = j.at("eps").get<std::vector<double>>();
  const auto eps_upper = j.at("eps_upper").get<std::vector<double>>();
  const auto& alpha = j.at("alpha");
  const int n = static_cast<int>(rho.size());
  if (static_cast<int>(eps.size()) != n ||
      static_cast<int>(eps_upper.size()) != n ||
      static_cast<int>(alpha.size()) != n)
    throw IoError("design arrays disagree on cell count");
  DesignField<Dim> theta;
  theta.rho = Eigen::Map<const Eigen::VectorXd>(rho.data(), n);
  theta.eps = Eigen::Map<const Eigen::VectorXd>(eps.data(), n);
  theta.eps_upper = Eigen::Map<const Eigen::VectorXd>(eps_upper.data(), n);
  theta.alpha.resize(n, Dim - 1);
  for (int c = 0; c < n; ++c) {
    if (static_cast<int>(alpha[c].size()) != Dim - 1)
      throw IoError("design alpha rows must have one angle per tangent axis");
    for (int k = 0; k < Dim - 1; ++k) theta.alpha(c, k) = alpha[c][k].get<double>();
  }
  return theta;
}

}  // namespace anisoflow
