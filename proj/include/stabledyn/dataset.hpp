#pragma once

#include "stabledyn/systems.hpp"
#include "stabledyn/trajectory.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace stabledyn {

enum class SystemKind { Linear, LinearStochastic, Saturated, Sde, Lorenz };

std::string to_string(SystemKind s);
SystemKind parse_system(const std::string& s);
Eigen::Index system_dim(SystemKind s);

// Noise gain of the stochastic linear system.
inline constexpr double kLinearNoiseGain = 0.1;

struct GridSpec {
  double lo = -6.0;
  double hi = 6.0;
  int count = 14;
};

// count^n equally spaced points per axis, endpoints included; the last
// coordinate varies fastest.
std::vector<Vec> grid_points(const GridSpec& grid, Eigen::Index n);

struct GenerateOptions {
  SystemKind system = SystemKind::Saturated;
  double h = 0.1;
  int steps = 40;
  std::uint64_t seed = 0;
  std::optional<GridSpec> grid;
  std::vector<Vec> initial_conditions;  // used when grid is empty
};

struct TransitionDataset {
  std::vector<Vec> x;
  std::vector<Vec> x_next;
  std::string system;
  double dt = 0.0;
  std::uint64_t seed = 0;
  int steps = 0;
  std::optional<GridSpec> grid;

  std::size_t size() const { return x.size(); }
  bool empty() const { return x.empty(); }
  Eigen::Index dim() const { return x.empty() ? 0 : x.front().size(); }
  void add(Vec from, Vec to);
};

// One step of the ground-truth discrete-time system.
Vec system_step(SystemKind system, const Vec& x, double h, std::mt19937_64& rng);

// Trajectory i uses the generator stream seeded with seed + i.
std::vector<Trajectory> simulate(const GenerateOptions& opts);
Trajectory simulate_one(SystemKind system, const Vec& x0, double h, int steps, std::uint64_t seed);
TransitionDataset to_transitions(const std::vector<Trajectory>& trajectories);
TransitionDataset generate_dataset(const GenerateOptions& opts);

// Header x1..xn,y1..yn, one transition per row, 17 significant digits.
void write_dataset_csv(const TransitionDataset& data, const std::string& path);
TransitionDataset read_dataset_csv(const std::string& path);
// Sidecar {system, h, seed, grid, steps}.
void write_dataset_metadata(const TransitionDataset& data, const std::string& path);

}  // namespace stabledyn
