#pragma once

#include "stabledyn/stable_model.hpp"

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

namespace stabledyn {

struct MdnSpec {
  Eigen::Index n = 2;
  int k = 2;
  std::vector<Eigen::Index> hidden = {25, 25};
  Activation activation = Activation::ReLU;
  LyapunovOptions lyapunov;
  // Only None, Convex and Implicit are meaningful here.
  StabilityConfig stability;
  double sigma_cap = 1.0;
};

struct MdnOutput {
  Vec pi;             // k, on the simplex
  Mat mus;            // k x n, after stabilization
  Mat sigmas;         // k x n standard deviations
  Vec mixture_mean;   // sum_i pi_i mus.row(i)
  double max_var = 0.0;
  ScalingInfo scaling;
};

struct TapedMdnOutput {
  Var log_pi;                    // k
  std::vector<Var> mus;          // k vectors of length n
  std::vector<Var> log_sigmas;   // k vectors of length n
  Var mixture_mean;
  ScalingInfo scaling;
};

struct StochasticRollout {
  Trajectory states;  // sampled path
  Trajectory means;   // mixture means fed back as states, no sampling
};

// Gaussian mixture density network for x_{t+1} | x_t. With a stability mode,
// every component mean is scaled by one common factor so that the mixture
// mean satisfies V(mean) <= beta V(x) (up to the root-finder tolerance), and
// each diagonal variance is sigmoid(raw)^2 * sigma_cap * V(mean).
// Without one, standard deviations are exp(raw).
class MdnHead {
 public:
  static MdnHead create(const MdnSpec& spec, std::uint64_t seed);

  MdnHead(ParamStore params, Mlp trunk, Mlp coeff_net, std::unique_ptr<LyapunovFunction> lyapunov,
          StabilityConfig cfg, int k, double sigma_cap);

  Eigen::Index dim() const { return trunk_.in_dim(); }
  int k() const { return k_; }
  double sigma_cap() const { return sigma_cap_; }
  const StabilityConfig& config() const { return cfg_; }
  bool stabilized() const { return cfg_.mode == StabilityMode::Convex || cfg_.mode == StabilityMode::Implicit; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const LyapunovFunction& lyapunov() const { return *lyapunov_; }
  const Mlp& trunk() const { return trunk_; }
  const Mlp& coeff_net() const { return coeff_; }
  const std::optional<MdnSpec>& spec() const { return spec_; }
  double v(const Vec& x) const { return lyapunov_->value(params_, x); }

  MdnOutput forward(const Vec& x) const;
  TapedMdnOutput record_forward(Tape& tape, const Vec& x) const;

  // -log p(x_next | x), via log-sum-exp over components.
  double nll(const Vec& x, const Vec& x_next) const;
  Var record_nll(Tape& tape, const Vec& x, const Vec& x_next) const;

  Vec sample(const Vec& x, std::mt19937_64& rng) const;
  StochasticRollout rollout(const Vec& x0, int steps, std::mt19937_64& rng) const;

  void enforce_constraints() { lyapunov_->enforce_constraints(params_); }

 private:
  ParamStore params_;
  Mlp trunk_;
  Mlp coeff_;
  std::unique_ptr<LyapunovFunction> lyapunov_;
  StabilityConfig cfg_;
  int k_ = 1;
  double sigma_cap_ = 1.0;
  std::optional<MdnSpec> spec_;
};

// Negative log-density of x under a diagonal Gaussian mixture.
double mixture_nll(const Vec& pi, const Mat& mus, const Mat& sigmas, const Vec& x);

}  // namespace stabledyn
