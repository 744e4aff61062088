#pragma once

#include "stabledyn/dataset.hpp"
#include "stabledyn/mdn.hpp"
#include "stabledyn/stable_model.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <vector>

namespace stabledyn {

enum class LossKind { MSE, NLL };

struct TrainConfig {
  double lr = 0.0025;
  int epochs = 200;
  // 0 means one full-batch step per epoch.
  int batch_size = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::MSE;

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);

// Bias-corrected first/second moment buffers, one per parameter entry.
class AdamState {
 public:
  explicit AdamState(const ParamStore& params);
  long step_count() const { return t_; }

 private:
  friend void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg);
  std::vector<Mat> m_;
  std::vector<Mat> v_;
  long t_ = 0;
};

// Updates parameters in place from their gradients, then zeroes the
// gradients. Throws NumericalError naming the first non-finite gradient.
void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg);

struct TrainReport {
  std::vector<double> epoch_loss;
  double final_loss = 0.0;
  double wall_seconds = 0.0;
  // Training-time forward passes with V(out) - beta V(x) > tol.
  long stability_violations = 0;
  long interventions = 0;
  int max_bisect_iters = 0;
  // Transitions left out of the loss (stabilized MDNs conditioned on the origin).
  long skipped_transitions = 0;
  TrainConfig config;

  nlohmann::json to_json() const;
};

using EpochCallback = std::function<void(int epoch, double loss)>;

TrainReport train(StableModel& model, const TransitionDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});
TrainReport train(MdnHead& model, const TransitionDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

enum class Metric { MSE, NLL, VViolations };

Metric parse_metric(const std::string& s);

// One-step mean squared error, averaged over transitions and coordinates.
double evaluate_mse(const StableModel& model, const TransitionDataset& data);
// Mean negative log-likelihood per transition. Stabilized MDNs skip
// conditioning states with V below the origin guard.
double evaluate_nll(const MdnHead& model, const TransitionDataset& data);
// Transitions with V(out) - beta V(x) > tol.
long count_v_violations(const StableModel& model, const TransitionDataset& data);
// For MDNs the mixture mean stands in for the next state.
long count_v_violations(const MdnHead& model, const TransitionDataset& data);

double evaluate(const StableModel& model, const TransitionDataset& data, Metric metric);
double evaluate(const MdnHead& model, const TransitionDataset& data, Metric metric);

// Mean squared error between a model rollout and each reference trajectory,
// averaged over time steps and trajectories.
double rollout_mse(const StableModel& model, const std::vector<Trajectory>& reference);
// Average NLL of x_{t+1} | x_t at each time step t over reference trajectories.
std::vector<double> per_step_nll(const MdnHead& model, const std::vector<Trajectory>& reference);

}  // namespace stabledyn
