#include "stabledyn/dataset.hpp"

#include <json.hpp>

#include <fstream>
#include <iomanip>
#include <sstream>

namespace stabledyn {

std::string to_string(SystemKind s) {
  switch (s) {
    case SystemKind::Linear: return "linear";
    case SystemKind::LinearStochastic: return "linear-stoch";
    case SystemKind::Saturated: return "saturated";
    case SystemKind::Sde: return "sde";
    case SystemKind::Lorenz: return "lorenz";
  }
  return "linear";
}

SystemKind parse_system(const std::string& s) {
  if (s == "linear") return SystemKind::Linear;
  if (s == "linear-stoch") return SystemKind::LinearStochastic;
  if (s == "saturated") return SystemKind::Saturated;
  if (s == "sde") return SystemKind::Sde;
  if (s == "lorenz") return SystemKind::Lorenz;
  throw std::invalid_argument("unknown system: " + s);
}

Eigen::Index system_dim(SystemKind s) { return s == SystemKind::Lorenz ? 3 : 2; }

std::vector<Vec> grid_points(const GridSpec& grid, Eigen::Index n) {
  if (grid.count < 1) throw std::invalid_argument("grid count must be positive");
  if (grid.count > 1 && !(grid.hi > grid.lo)) throw std::invalid_argument("grid needs lo < hi");
  std::vector<double> axis(static_cast<std::size_t>(grid.count));
  for (int i = 0; i < grid.count; ++i) {
    axis[static_cast<std::size_t>(i)] =
        grid.count == 1 ? grid.lo : grid.lo + (grid.hi - grid.lo) * i / (grid.count - 1);
  }
  if (grid.count > 1) axis.back() = grid.hi;

  std::size_t total = 1;
  for (Eigen::Index d = 0; d < n; ++d) total *= axis.size();
  std::vector<Vec> points;
  points.reserve(total);
  for (std::size_t flat = 0; flat < total; ++flat) {
    Vec p(n);
    std::size_t rem = flat;
    for (Eigen::Index d = n - 1; d >= 0; --d) {
      p(d) = axis[rem % axis.size()];
      rem /= axis.size();
    }
    points.push_back(p);
  }
  return points;
}

void TransitionDataset::add(Vec from, Vec to) {
  if (!x.empty() && (from.size() != dim() || to.size() != dim())) {
    throw DimensionError("transition dimension differs from the dataset");
  }
  if (from.size() != to.size()) throw DimensionError("transition endpoints differ in length");
  x.push_back(std::move(from));
  x_next.push_back(std::move(to));
}

Vec system_step(SystemKind system, const Vec& x, double h, std::mt19937_64& rng) {
  if (x.size() != system_dim(system)) throw DimensionError("state has wrong length for system");
  switch (system) {
    case SystemKind::Linear: return LinearStochasticSystem{example_linear_matrix(), 0.0}.step(x, rng);
    case SystemKind::LinearStochastic:
      return LinearStochasticSystem{example_linear_matrix(), kLinearNoiseGain}.step(x, rng);
    case SystemKind::Saturated: return rk4_step(saturated_field(), x, h);
    case SystemKind::Sde: return srk2_step(sde_system(), x, h, rng);
    case SystemKind::Lorenz: return rk4_step(lorenz_field(), x, h);
  }
  throw std::logic_error("unreachable");
}

Trajectory simulate_one(SystemKind system, const Vec& x0, double h, int steps, std::uint64_t seed) {
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
  std::mt19937_64 rng(seed);
  Trajectory traj;
  traj.dt = h;
  traj.seed = seed;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.push_back(x0);
  for (int t = 0; t < steps; ++t) traj.states.push_back(system_step(system, traj.states.back(), h, rng));
  return traj;
}

std::vector<Trajectory> simulate(const GenerateOptions& opts) {
  const std::vector<Vec> starts =
      opts.grid ? grid_points(*opts.grid, system_dim(opts.system)) : opts.initial_conditions;
  if (starts.empty()) throw std::invalid_argument("no initial conditions given");
  std::vector<Trajectory> out;
  out.reserve(starts.size());
  for (std::size_t i = 0; i < starts.size(); ++i) {
    out.push_back(simulate_one(opts.system, starts[i], opts.h, opts.steps, opts.seed + i));
  }
  return out;
}

TransitionDataset to_transitions(const std::vector<Trajectory>& trajectories) {
  TransitionDataset data;
  for (const auto& traj : trajectories) {
    for (std::size_t t = 0; t + 1 < traj.states.size(); ++t) data.add(traj.states[t], traj.states[t + 1]);
  }
  return data;
}

TransitionDataset generate_dataset(const GenerateOptions& opts) {
  TransitionDataset data = to_transitions(simulate(opts));
  data.system = to_string(opts.system);
  data.dt = opts.h;
  data.seed = opts.seed;
  data.steps = opts.steps;
  data.grid = opts.grid;
  return data;
}

void write_dataset_csv(const TransitionDataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  const Eigen::Index n = data.dim();
  for (Eigen::Index i = 0; i < n; ++i) os << (i ? "," : "") << "x" << i + 1;
  for (Eigen::Index i = 0; i < n; ++i) os << ",y" << i + 1;
  os << "\n" << std::setprecision(17);
  for (std::size_t r = 0; r < data.size(); ++r) {
    for (Eigen::Index i = 0; i < n; ++i) os << (i ? "," : "") << data.x[r](i);
    for (Eigen::Index i = 0; i < n; ++i) os << "," << data.x_next[r](i);
    os << "\n";
  }
  if (!os) throw std::runtime_error("failed writing " + path);
}

TransitionDataset read_dataset_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset " + path);
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error("dataset " + path + " is empty");
  std::size_t columns = 1;
  for (char c : line) columns += c == ',' ? 1 : 0;
  if (columns % 2 != 0 || line.rfind("x1", 0) != 0) {
    throw std::runtime_error("dataset header must be x1..xn,y1..yn");
  }
  const auto n = static_cast<Eigen::Index>(columns / 2);
  TransitionDataset data;
  std::size_t row = 1;
  while (std::getline(is, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    Vec from(n);
    Vec to(n);
    for (Eigen::Index c = 0; c < 2 * n; ++c) {
      if (!std::getline(ss, cell, ',')) {
        throw std::runtime_error(path + ":" + std::to_string(row) + ": too few columns");
      }
      const double v = std::stod(cell);
      (c < n ? from(c) : to(c - n)) = v;
    }
    data.add(std::move(from), std::move(to));
  }
  const std::string meta_path = path + ".json";
  std::ifstream meta(meta_path);
  if (meta) {
    const auto j = nlohmann::json::parse(meta, nullptr, false);
    if (!j.is_discarded()) {
      data.system = j.value("system", "");
      data.dt = j.value("h", 0.0);
      data.seed = j.value("seed", std::uint64_t{0});
      data.steps = j.value("steps", 0);
    }
  }
  return data;
}

void write_dataset_metadata(const TransitionDataset& data, const std::string& path) {
  nlohmann::json j;
  j["system"] = data.system;
  j["h"] = data.dt;
  j["seed"] = data.seed;
  j["steps"] = data.steps;
  if (data.grid) {
    j["grid"] = {{"lo", data.grid->lo}, {"hi", data.grid->hi}, {"count", data.grid->count}};
  } else {
    j["grid"] = nullptr;
  }
  j["transitions"] = data.size();
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  os << j.dump(2) << "\n";
}

}  // namespace stabledyn
