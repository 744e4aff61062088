#include "stabledyn/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace stabledyn {

void TrainConfig::validate() const {
  if (!(lr >= 0.0)) throw std::invalid_argument("learning rate must be nonnegative");
  if (epochs < 0) throw std::invalid_argument("epochs must be nonnegative");
  if (batch_size < 0) throw std::invalid_argument("batch size must be nonnegative");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("Adam betas must lie in (0, 1)");
  }
  if (!(adam_eps > 0.0)) throw std::invalid_argument("Adam epsilon must be positive");
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"lr", cfg.lr},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"seed", cfg.seed},
          {"loss", cfg.loss == LossKind::MSE ? "mse" : "nll"}};
}

AdamState::AdamState(const ParamStore& params) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Mat& v = params.value(ParamId{i});
    m_.push_back(Mat::Zero(v.rows(), v.cols()));
    v_.push_back(Mat::Zero(v.rows(), v.cols()));
  }
}

void adam_step(ParamStore& params, AdamState& state, const TrainConfig& cfg) {
  if (state.m_.size() != params.size()) throw std::invalid_argument("Adam state does not match parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params.grad(ParamId{i}).allFinite()) {
      throw NumericalError("non-finite gradient in parameter " + params.name(ParamId{i}));
    }
  }
  ++state.t_;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t_));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const ParamId id{i};
    Mat& g = params.grad(id);
    Mat& m = state.m_[i];
    Mat& v = state.v_[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseAbs2();
    params.value(id).array() -=
        cfg.lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
    g.setZero();
  }
}

nlohmann::json TrainReport::to_json() const {
  return {{"epoch_loss", epoch_loss},
          {"final_loss", final_loss},
          {"wall_seconds", wall_seconds},
          {"stability_violations", stability_violations},
          {"interventions", interventions},
          {"max_bisect_iters", max_bisect_iters},
          {"skipped_transitions", skipped_transitions},
          {"config", stabledyn::to_json(config)}};
}

namespace {

// Shared epoch/batch loop. sample_loss records one transition's loss on the
// tape and returns it; the loop scales it by 1/batch and sweeps.
template <class Model, class SampleLoss>
TrainReport run_training(Model& model, const TransitionDataset& data, const TrainConfig& cfg,
                         const EpochCallback& on_epoch, SampleLoss&& sample_loss) {
  cfg.validate();
  if (data.empty()) throw std::invalid_argument("training data is empty");
  if (data.dim() != model.dim()) throw DimensionError("dataset dimension does not match model");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.config = cfg;
  ParamStore& params = model.params();
  params.zero_grads();
  AdamState adam(params);
  std::mt19937_64 rng(cfg.seed);

  const std::size_t n = data.size();
  const std::size_t batch =
      cfg.batch_size == 0 ? n : std::min<std::size_t>(n, static_cast<std::size_t>(cfg.batch_size));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch < n) std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    std::size_t used = 0;
    for (std::size_t begin = 0; begin < n; begin += batch) {
      const std::size_t end = std::min(n, begin + batch);
      const double weight = 1.0 / static_cast<double>(end - begin);
      for (std::size_t b = begin; b < end; ++b) {
        const std::size_t i = order[b];
        Tape tape;
        Var loss = sample_loss(tape, data.x[i], data.x_next[i], report);
        if (!loss.valid()) {
          if (epoch == 0) ++report.skipped_transitions;
          continue;
        }
        ++used;
        const double value = loss.scalar();
        if (!std::isfinite(value)) {
          throw NumericalError("training diverged (non-finite loss) in epoch " + std::to_string(epoch));
        }
        total += value;
        tape.backward(scale(tape.constant(weight), loss), params);
      }
      adam_step(params, adam, cfg);
      model.enforce_constraints();
    }
    if (used == 0) throw std::invalid_argument("no usable transitions in the training data");
    const double mean = total / static_cast<double>(used);
    report.epoch_loss.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  if (!report.epoch_loss.empty()) report.final_loss = report.epoch_loss.back();
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

bool decrease_mode(StabilityMode m) {
  return m == StabilityMode::Convex || m == StabilityMode::Implicit;
}

// A stabilized MDN conditioned on the origin predicts a point mass there, so
// its likelihood is undefined.
bool degenerate(const MdnHead& model, const Vec& x) {
  return model.stabilized() && model.v(x) < kOriginGuard;
}

void record_scaling_stats(const ScalingInfo& s, TrainReport& report) {
  if (!s.intervened) return;
  ++report.interventions;
  if (s.root) report.max_bisect_iters = std::max(report.max_bisect_iters, s.root->bisect_iters);
}

}  // namespace

TrainReport train(StableModel& model, const TransitionDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (cfg.loss != LossKind::MSE) throw std::invalid_argument("deterministic models train with MSE");
  const bool check = decrease_mode(model.config().mode);
  const double inv_n = 1.0 / static_cast<double>(model.dim());
  return run_training(model, data, cfg, on_epoch,
                      [&](Tape& tape, const Vec& x, const Vec& x_next, TrainReport& report) {
                        StepInfo info;
                        Var out = model.record_step(tape, x, &info);
                        record_scaling_stats(info.scaling, report);
                        if (check) {
                          const auto& c = model.config();
                          if (model.v(out.vec()) - c.beta * model.v(x) > c.rootfind_tol) {
                            ++report.stability_violations;
                          }
                        }
                        Var diff = out - tape.constant(Mat(x_next));
                        return scale(tape.constant(inv_n), dot(diff, diff));
                      });
}

TrainReport train(MdnHead& model, const TransitionDataset& data, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  if (cfg.loss != LossKind::NLL) throw std::invalid_argument("MDN models train with NLL");
  const bool check = model.stabilized();
  return run_training(model, data, cfg, on_epoch,
                      [&](Tape& tape, const Vec& x, const Vec& x_next, TrainReport& report) {
                        if (degenerate(model, x)) return Var{};
                        Var nll = model.record_nll(tape, x, x_next);
                        // record_nll does not expose its forward pass; the
                        // plain forward reproduces the same mixture mean.
                        if (check) {
                          const MdnOutput out = model.forward(x);
                          record_scaling_stats(out.scaling, report);
                          const auto& c = model.config();
                          if (model.v(out.mixture_mean) - c.beta * model.v(x) > c.rootfind_tol) {
                            ++report.stability_violations;
                          }
                        }
                        return nll;
                      });
}

Metric parse_metric(const std::string& s) {
  if (s == "mse") return Metric::MSE;
  if (s == "nll") return Metric::NLL;
  if (s == "v-violations") return Metric::VViolations;
  throw std::invalid_argument("unknown metric: " + s);
}

double evaluate_mse(const StableModel& model, const TransitionDataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluation data is empty");
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    total += (model.step(data.x[i]) - data.x_next[i]).squaredNorm();
  }
  return total / static_cast<double>(data.size() * static_cast<std::size_t>(data.dim()));
}

double evaluate_nll(const MdnHead& model, const TransitionDataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluation data is empty");
  double total = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (degenerate(model, data.x[i])) continue;
    total += model.nll(data.x[i], data.x_next[i]);
    ++used;
  }
  if (used == 0) throw std::invalid_argument("no usable transitions in the evaluation data");
  return total / static_cast<double>(used);
}

long count_v_violations(const StableModel& model, const TransitionDataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluation data is empty");
  const auto& c = model.config();
  long count = 0;
  for (const auto& x : data.x) {
    if (model.v(model.step(x)) - c.beta * model.v(x) > c.rootfind_tol) ++count;
  }
  return count;
}

long count_v_violations(const MdnHead& model, const TransitionDataset& data) {
  if (data.empty()) throw std::invalid_argument("evaluation data is empty");
  const auto& c = model.config();
  long count = 0;
  for (const auto& x : data.x) {
    if (model.v(model.forward(x).mixture_mean) - c.beta * model.v(x) > c.rootfind_tol) ++count;
  }
  return count;
}

double evaluate(const StableModel& model, const TransitionDataset& data, Metric metric) {
  switch (metric) {
    case Metric::MSE: return evaluate_mse(model, data);
    case Metric::VViolations: return static_cast<double>(count_v_violations(model, data));
    case Metric::NLL: throw std::invalid_argument("NLL needs a mixture density model");
  }
  throw std::logic_error("unreachable");
}

double evaluate(const MdnHead& model, const TransitionDataset& data, Metric metric) {
  switch (metric) {
    case Metric::NLL: return evaluate_nll(model, data);
    case Metric::VViolations: return static_cast<double>(count_v_violations(model, data));
    case Metric::MSE: {
      if (data.empty()) throw std::invalid_argument("evaluation data is empty");
      double total = 0.0;
      for (std::size_t i = 0; i < data.size(); ++i) {
        total += (model.forward(data.x[i]).mixture_mean - data.x_next[i]).squaredNorm();
      }
      return total / static_cast<double>(data.size() * static_cast<std::size_t>(data.dim()));
    }
  }
  throw std::logic_error("unreachable");
}

double rollout_mse(const StableModel& model, const std::vector<Trajectory>& reference) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& ref : reference) {
    if (ref.states.size() < 2) continue;
    const Trajectory pred = model.rollout(ref.states.front(), static_cast<int>(ref.states.size()) - 1);
    for (std::size_t t = 1; t < ref.states.size(); ++t) {
      total += (pred.states[t] - ref.states[t]).squaredNorm() / static_cast<double>(model.dim());
      ++count;
    }
  }
  if (count == 0) throw std::invalid_argument("no reference transitions");
  return total / static_cast<double>(count);
}

std::vector<double> per_step_nll(const MdnHead& model, const std::vector<Trajectory>& reference) {
  std::vector<double> sums;
  std::vector<std::size_t> counts;
  for (const auto& ref : reference) {
    for (std::size_t t = 0; t + 1 < ref.states.size(); ++t) {
      if (sums.size() <= t) {
        sums.push_back(0.0);
        counts.push_back(0);
      }
      if (degenerate(model, ref.states[t])) continue;
      sums[t] += model.nll(ref.states[t], ref.states[t + 1]);
      ++counts[t];
    }
  }
  for (std::size_t t = 0; t < sums.size(); ++t) {
    sums[t] = counts[t] ? sums[t] / static_cast<double>(counts[t]) : std::nan("");
  }
  return sums;
}

}  // namespace stabledyn
