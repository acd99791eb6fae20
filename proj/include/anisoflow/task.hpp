#pragma once

#include <anisoflow/assembly.hpp>
#include <anisoflow/grid.hpp>
#include <anisoflow/material.hpp>

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace anisoflow {

/** Task files that fail validation raise this with every issue listed. */
class TaskError : public std::runtime_error {
 public:
  explicit TaskError(std::vector<std::string> issues)
      : std::runtime_error(join(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::ostringstream os;
    os << "invalid task:";
    for (const auto& s : v) os << "\n  - " << s;
    return os.str();
  }
  std::vector<std::string> issues_;
};

enum class PatchRole { inlet, outlet, wall };

/** One node where the outlet mismatch is measured. */
template <int Dim>
struct OutletNode {
  int node;
  Vec<Dim> target;
  int axis;  // face normal axis, for optional surface weighting
};

/** Planar region on one grid face, in the physical coordinates of the
 *  face's in-plane axes (ascending axis order). */
template <int Dim>
struct BoundaryPatch {
  std::string id;
  int axis = 0;        // face normal axis
  int side = 0;        // 0: low face, 1: high face
  PatchRole role = PatchRole::wall;
  bool circle = false; // rectangle otherwise
  bool parabolic = false;  // velocity tapers to zero at the patch rim
  Eigen::Matrix<double, Dim - 1, 1> center;
  Eigen::Matrix<double, Dim - 1, 1> extent;  // full widths; [0] doubles as radius
  Vec<Dim> velocity = Vec<Dim>::Zero();       // inlet/wall value, outlet target

  bool contains(const Eigen::Matrix<double, Dim - 1, 1>& p) const {
    if (circle) return (p - center).norm() <= extent[0] + 1e-12;
    for (int k = 0; k < Dim - 1; ++k)
      if (std::abs(p[k] - center[k]) > 0.5 * extent[k] + 1e-12) return false;
    return true;
  }

  /** Boundary value at an in-plane point: the patch velocity, scaled by a
   *  parabolic bump when the profile tapers (a fully developed channel
   *  profile, compatible with no-slip walls hugging the patch rim). */
  Vec<Dim> value_at(const Eigen::Matrix<double, Dim - 1, 1>& p) const {
    if (!parabolic) return velocity;
    double bump = 1.0;
    if (circle) {
      const double r2 = (p - center).squaredNorm() / (extent[0] * extent[0]);
      bump = std::max(0.0, 1.0 - r2);
    } else {
      for (int k = 0; k < Dim - 1; ++k) {
        const double s = 2.0 * (p[k] - center[k]) / extent[k];
        bump *= std::max(0.0, 1.0 - s * s);
      }
    }
    return bump * velocity;
  }
};

/** Objective weights, thresholds, and volume budgets. */
struct ObjectiveWeights {
  double w_c = 1e-2;   // compliance
  double w_d = 1e-2;   // direction smoothness
  double w_a = 1e-2;   // anisotropy-in-bulk penalty
  double eps0 = 0.5;   // membership thresholds for the direction penalty
  double rho0 = 0.5;
  double V_max = 0.5;  // isotropic fluid budget, fraction of cell count
  double V_b = 0.1;    // extra allowance for boundary (anisotropic) material
  bool normalize = true;       // rescale regularizers by first-iteration values
  bool face_weighted_Lf = false;

  void validate(std::vector<std::string>& issues) const {
    if (!(w_c >= 0 && w_d >= 0 && w_a >= 0))
      issues.push_back("objective weights must be nonnegative");
    if (!(eps0 >= 0 && eps0 <= 1 && rho0 >= 0 && rho0 <= 1))
      issues.push_back("membership thresholds must lie in [0,1]");
    if (!(V_max > 0 && V_max <= 1))
      issues.push_back("V_max must lie in (0,1]");
    if (!(V_b >= 0 && V_b <= 1)) issues.push_back("V_b must lie in [0,1]");
  }
};

struct OptimizerSettings {
  int iterations = 300;
  double perturb = 0.0;   // uniform(-k,k) noise on initial rho and alpha
  std::uint64_t seed = 0;
  bool isotropic = false; // freeze eps = 1 and alpha: density-only design
};

/**
 * A complete problem description: grid, boundary roles, material model,
 * objective weights, and optimizer settings. Faces carrying an outlet
 * patch are open: their nodes stay free in the main solve and are only
 * pinned (targets on the patch, zero elsewhere) for the compliance solve.
 * Every node on a closed face gets a Dirichlet value: an explicit inlet
 * or wall patch value if one contains it, zero otherwise. Inlet values
 * take precedence over implied wall zeros at shared edges.
 */
template <int Dim>
struct TaskSpec {
  std::string name = "task";
  GridSpec<Dim> grid;
  std::vector<BoundaryPatch<Dim>> patches;
  MaterialHyperparams material;
  ObjectiveWeights weights;
  OptimizerSettings optimizer;
  double init_rho = -1.0;  // negative: use V_max
  double init_eps = 1.0;
  double init_alpha = 0.0;

  /** In-plane physical coordinates of a node on a face of `axis`. */
  Eigen::Matrix<double, Dim - 1, 1> face_point(int node, int axis) const {
    const auto c = grid.node_coords(node);
    Eigen::Matrix<double, Dim - 1, 1> p;
    int k = 0;
    for (int d = 0; d < Dim; ++d)
      if (d != axis) p[k++] = c[d] * grid.spacing();
    return p;
  }

  bool node_on_face(int node, int axis, int side) const {
    const auto c = grid.node_coords(node);
    return c[axis] == (side == 0 ? 0 : grid.cells[axis]);
  }

  bool face_is_open(int axis, int side) const {
    for (const auto& p : patches)
      if (p.role == PatchRole::outlet && p.axis == axis && p.side == side)
        return true;
    return false;
  }

  /** Dirichlet data of the main solve: all closed-face nodes pinned. */
  DirichletSet<Dim> dirichlet_main() const {
    DirichletSet<Dim> bc;
    for (int node = 0; node < grid.node_count(); ++node) {
      std::optional<Vec<Dim>> value;
      bool on_closed_face = false;
      for (int axis = 0; axis < Dim; ++axis) {
        for (int side = 0; side < 2; ++side) {
          if (!node_on_face(node, axis, side) || face_is_open(axis, side)) continue;
          on_closed_face = true;
          const auto p = face_point(node, axis);
          for (const auto& patch : patches) {
            if (patch.role == PatchRole::outlet) continue;
            if (patch.axis != axis || patch.side != side) continue;
            if (!patch.contains(p)) continue;
            // inlets win over walls where both touch a node
            if (!value || patch.role == PatchRole::inlet) value = patch.value_at(p);
          }
        }
      }
      if (on_closed_face) bc.pin_node(node, value.value_or(Vec<Dim>::Zero()));
    }
    return bc;
  }

  /** Extra pins for the compliance solve: open-face nodes not already
   *  pinned get their outlet target (zero off the patches). */
  DirichletSet<Dim> dirichlet_outlets(const DirichletSet<Dim>& main) const {
    DirichletSet<Dim> extra;
    for (int node = 0; node < grid.node_count(); ++node) {
      if (main.contains(grid.dof(node, 0))) continue;
      std::optional<Vec<Dim>> value;
      bool on_open_face = false;
      for (int axis = 0; axis < Dim; ++axis) {
        for (int side = 0; side < 2; ++side) {
          if (!node_on_face(node, axis, side) || !face_is_open(axis, side)) continue;
          on_open_face = true;
          const auto p = face_point(node, axis);
          for (const auto& patch : patches)
            if (patch.role == PatchRole::outlet && patch.axis == axis &&
                patch.side == side && patch.contains(p))
              value = patch.value_at(p);
        }
      }
      if (on_open_face) extra.pin_node(node, value.value_or(Vec<Dim>::Zero()));
    }
    return extra;
  }

  /** Outlet measurement set: nodes of outlet patches with their targets. */
  std::vector<OutletNode<Dim>> outlet_targets() const {
    std::vector<OutletNode<Dim>> out;
    for (int node = 0; node < grid.node_count(); ++node) {
      for (const auto& patch : patches) {
        if (patch.role != PatchRole::outlet) continue;
        if (!node_on_face(node, patch.axis, patch.side)) continue;
        const auto p = face_point(node, patch.axis);
        if (!patch.contains(p)) continue;
        out.push_back({node, patch.value_at(p), patch.axis});
        break;  // overlap on a face is rejected at load time
      }
    }
    return out;
  }

  DesignField<Dim> initial_design() const {
    const double rho0 = init_rho >= 0.0 ? init_rho : weights.V_max;
    auto theta = DesignField<Dim>::uniform(grid.cell_count(), rho0, init_eps);
    theta.alpha.setConstant(init_alpha);
    return theta;
  }
};

/** Trapezoid-weighted flux of the full velocity field through one face,
 *  positive outward. Matches the per-face averages the cell-flux rows use,
 *  so summed over all faces it is consistent with the block constraints. */
template <int Dim>
double face_flux(const GridSpec<Dim>& grid, const Eigen::VectorXd& v_full, int axis,
                 int side) {
  double flux = 0.0;
  const double sign = side == 0 ? -1.0 : 1.0;
  for (int node = 0; node < grid.node_count(); ++node) {
    const auto c = grid.node_coords(node);
    if (c[axis] != (side == 0 ? 0 : grid.cells[axis])) continue;
    double w = 1.0;
    for (int d = 0; d < Dim; ++d) {
      if (d == axis) continue;
      const bool edge = c[d] == 0 || c[d] == grid.cells[d];
      w *= grid.spacing() * (edge ? 0.5 : 1.0);
    }
    flux += sign * w * v_full[grid.dof(node, axis)];
  }
  return flux;
}

// ---------------------------------------------------------------------------
// JSON loading
// ---------------------------------------------------------------------------

inline int task_file_dim(const nlohmann::json& j) {
  if (!j.contains("grid") || !j["grid"].contains("dim"))
    throw TaskError({"missing grid.dim"});
  const int dim = j["grid"]["dim"].get<int>();
  if (dim != 2 && dim != 3) throw TaskError({"grid.dim must be 2 or 3"});
  return dim;
}

inline nlohmann::json parse_task_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TaskError({"cannot open task file: " + path});
  nlohmann::json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw TaskError({std::string("task file is not valid JSON: ") + e.what()});
  }
  return j;
}

template <int Dim>
TaskSpec<Dim> load_task(const nlohmann::json& j) {
  std::vector<std::string> issues;
  TaskSpec<Dim> task;
  using nlohmann::json;

  auto get_vec = [&](const json& arr, int n, const char* what,
                     Eigen::VectorXd& out) {
    if (!arr.is_array() || static_cast<int>(arr.size()) != n) {
      issues.push_back(std::string(what) + " must be an array of " +
                       std::to_string(n) + " numbers");
      return false;
    }
    out.resize(n);
    for (int i = 0; i < n; ++i) out[i] = arr[i].get<double>();
    return true;
  };

  try {
    task.name = j.value("name", std::string("task"));

    const auto& jg = j.at("grid");
    std::array<int, Dim> cells{};
    if (!jg.contains("cells") || !jg["cells"].is_array() ||
        static_cast<int>(jg["cells"].size()) != Dim) {
      issues.push_back("grid.cells must list one cell count per axis");
    } else {
      for (int d = 0; d < Dim; ++d) cells[d] = jg["cells"][d].get<int>();
      for (int d = 0; d < Dim; ++d)
        if (cells[d] < 1) issues.push_back("grid.cells entries must be >= 1");
    }
    int block = jg.value("block_size", Dim == 2 ? 8 : 4);
    if (block < 0) issues.push_back("grid.block_size must be >= 0");
    if (issues.empty()) task.grid = GridSpec<Dim>(cells, block);

    for (const auto& jp : j.value("patches", json::array())) {
      BoundaryPatch<Dim> patch;
      patch.id = jp.value("id", std::string());
      if (patch.id.empty()) issues.push_back("every patch needs an id");

      const std::string face = jp.value("face", std::string());
      if (face.size() == 2 && (face[1] == '-' || face[1] == '+') &&
          face[0] >= 'x' && face[0] < 'x' + Dim) {
        patch.axis = face[0] - 'x';
        patch.side = face[1] == '+' ? 1 : 0;
      } else {
        issues.push_back("patch '" + patch.id + "': face must be one of x-/x+/y-/y+" +
                         (Dim == 3 ? "/z-/z+" : ""));
      }

      const std::string role = jp.value("role", std::string());
      if (role == "inlet")
        patch.role = PatchRole::inlet;
      else if (role == "outlet")
        patch.role = PatchRole::outlet;
      else if (role == "wall")
        patch.role = PatchRole::wall;
      else
        issues.push_back("patch '" + patch.id + "': role must be inlet/outlet/wall");

      if (!jp.contains("shape")) {
        issues.push_back("patch '" + patch.id + "': missing shape");
      } else {
        const auto& js = jp["shape"];
        const std::string type = js.value("type", std::string("rectangle"));
        Eigen::VectorXd tmp;
        if (get_vec(js.value("center", json::array()), Dim - 1,
                    ("patch '" + patch.id + "' center").c_str(), tmp))
          patch.center = tmp;
        if (type == "circle") {
          patch.circle = true;
          const double r = js.value("radius", -1.0);
          if (!(r > 0))
            issues.push_back("patch '" + patch.id + "': circle needs radius > 0");
          patch.extent.setConstant(r);
        } else if (type == "rectangle") {
          if (get_vec(js.value("extent", json::array()), Dim - 1,
                      ("patch '" + patch.id + "' extent").c_str(), tmp)) {
            patch.extent = tmp;
            if (!(patch.extent.minCoeff() > 0))
              issues.push_back("patch '" + patch.id + "': extent must be positive");
          }
        } else {
          issues.push_back("patch '" + patch.id + "': unknown shape type " + type);
        }
      }

      const std::string profile = jp.value("profile", std::string("uniform"));
      if (profile == "parabolic")
        patch.parabolic = true;
      else if (profile != "uniform")
        issues.push_back("patch '" + patch.id + "': unknown profile " + profile);

      const char* field = patch.role == PatchRole::outlet ? "target" : "velocity";
      if (jp.contains(field)) {
        Eigen::VectorXd tmp;
        if (get_vec(jp[field], Dim, ("patch '" + patch.id + "' " + field).c_str(), tmp))
          patch.velocity = tmp;
      } else if (patch.role == PatchRole::inlet) {
        issues.push_back("patch '" + patch.id + "': inlet needs a velocity");
      } else if (patch.role == PatchRole::outlet) {
        issues.push_back("patch '" + patch.id + "': outlet needs a target");
      }
      if (!patch.velocity.allFinite())
        issues.push_back("patch '" + patch.id + "': values must be finite");
      task.patches.push_back(std::move(patch));
    }

    const auto& jm = j.value("material", json::object());
    auto& m = task.material;
    m.kf_min = jm.value("kf_min", m.kf_min);
    m.kf_max = jm.value("kf_max", m.kf_max);
    m.q = jm.value("q", m.q);
    m.lambda_min = jm.value("lambda_min", m.lambda_min);
    m.lambda_max = jm.value("lambda_max", m.lambda_max);
    m.p = jm.value("p", m.p);
    m.mu = jm.value("mu", m.mu);
    m.km_isotropic = jm.value("km_isotropic", false);
    m.kf_isotropic = jm.value("kf_isotropic", false);
    try {
      m.validate();
    } catch (const std::exception& e) {
      issues.push_back(e.what());
    }

    const auto& jw = j.value("weights", json::object());
    auto& w = task.weights;
    w.w_c = jw.value("w_c", w.w_c);
    w.w_d = jw.value("w_d", w.w_d);
    w.w_a = jw.value("w_a", w.w_a);
    w.eps0 = jw.value("eps0", w.eps0);
    w.rho0 = jw.value("rho0", w.rho0);
    w.V_max = jw.value("V_max", w.V_max);
    w.V_b = jw.value("V_b", w.V_b);
    w.normalize = jw.value("normalize", w.normalize);
    w.face_weighted_Lf = jw.value("face_weighted_Lf", w.face_weighted_Lf);
    w.validate(issues);

    const auto& jo = j.value("optimizer", json::object());
    auto& o = task.optimizer;
    o.iterations = jo.value("iterations", o.iterations);
    o.perturb = jo.value("perturb", o.perturb);
    o.seed = jo.value("seed", o.seed);
    o.isotropic = jo.value("isotropic", o.isotropic);
    if (o.iterations < 0) issues.push_back("optimizer.iterations must be >= 0");
    if (o.perturb < 0) issues.push_back("optimizer.perturb must be >= 0");

    const auto& ji = j.value("initial", json::object());
    task.init_rho = ji.value("rho", task.init_rho);
    task.init_eps = ji.value("eps", task.init_eps);
    task.init_alpha = ji.value("alpha", task.init_alpha);
    if (task.init_rho > 1.0) issues.push_back("initial.rho must lie in [0,1]");
    if (task.init_eps < 0.0 || task.init_eps > 1.0)
      issues.push_back("initial.eps must lie in [0,1]");
  } catch (const TaskError&) {
    throw;
  } catch (const std::exception& e) {
    issues.push_back(std::string("malformed task: ") + e.what());
  }

  // Cross-cutting geometry checks need a valid grid.
  if (issues.empty()) {
    // duplicate ids
    for (size_t a = 0; a < task.patches.size(); ++a)
      for (size_t b = a + 1; b < task.patches.size(); ++b)
        if (task.patches[a].id == task.patches[b].id)
          issues.push_back("duplicate patch id '" + task.patches[a].id + "'");

    // inlets on open faces make the face role ambiguous
    for (const auto& p : task.patches)
      if (p.role != PatchRole::outlet && task.face_is_open(p.axis, p.side))
        issues.push_back("patch '" + p.id +
                         "' shares a face with an outlet; closed-face roles only");

    // per-face overlap, judged on the face's nodes; report each pair once
    std::set<std::pair<std::string, std::string>> overlaps;
    for (int node = 0; node < task.grid.node_count(); ++node) {
      for (int axis = 0; axis < Dim; ++axis) {
        for (int side = 0; side < 2; ++side) {
          if (!task.node_on_face(node, axis, side)) continue;
          const auto p = task.face_point(node, axis);
          const BoundaryPatch<Dim>* first = nullptr;
          for (const auto& patch : task.patches) {
            if (patch.axis != axis || patch.side != side || !patch.contains(p))
              continue;
            if (first)
              overlaps.emplace(std::min(first->id, patch.id),
                               std::max(first->id, patch.id));
            else
              first = &patch;
          }
        }
      }
    }
    for (const auto& [a, b] : overlaps)
      issues.push_back("patches '" + a + "' and '" + b + "' overlap on face");
  }

  if (!issues.empty()) throw TaskError(issues);
  return task;
}

template <int Dim>
TaskSpec<Dim> load_task_file(const std::string& path) {
  const auto j = parse_task_file(path);
  if (task_file_dim(j) != Dim) throw TaskError({"task dimension mismatch"});
  return load_task<Dim>(j);
}

/** Uniform double in [0,1) from raw engine output; bit-stable across
 *  platforms, unlike std::uniform_real_distribution. */
inline double uniform01(std::uint64_t raw) {
  return static_cast<double>(raw >> 11) * 0x1.0p-53;
}

}  // namespace anisoflow
