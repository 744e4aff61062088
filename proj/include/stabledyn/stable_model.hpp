#pragma once

#include "stabledyn/lyapunov.hpp"
#include "stabledyn/mlp.hpp"
#include "stabledyn/trajectory.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

namespace stabledyn {

enum class StabilityMode { None, Convex, Implicit, Projection };

std::string to_string(StabilityMode m);
StabilityMode parse_stability_mode(const std::string& s);

// Below this value of V at the nominal prediction, scaling and root-finding
// are skipped and the prediction is returned unchanged.
inline constexpr double kOriginGuard = 1e-12;

struct StabilityConfig {
  StabilityMode mode = StabilityMode::None;
  double beta = 0.99;
  double rootfind_tol = 1e-3;
  int max_newton_iters = 50;
  int max_bisect_iters = 60;
  // f-hat predicts an increment and the model outputs x + step.
  bool integrating = false;

  void validate() const;
};

struct RootFindResult {
  double gamma_star = 1.0;
  int newton_iters = 0;
  int bisect_iters = 0;
  double residual = 0.0;
};

class RootFindError : public NumericalError {
 public:
  RootFindError(const std::string& what, double lo, double hi)
      : NumericalError(what), lo_(lo), hi_(hi) {}
  double bracket_lo() const { return lo_; }
  double bracket_hi() const { return hi_; }

 private:
  double lo_;
  double hi_;
};

// Closed-form scale factor for convex V:
//   gamma = (T - ReLU(T - V(y))) / V(y), and exactly 1 when V(y) <= T.
double convex_gamma(double v_next, double target);

// Safeguarded Newton on g(s) = V(s y) - target over the bracket [0, 1],
// starting from s = 1. Requires V(y) > target - tol and target > 0; when
// V(y) <= target already, s = 1 is returned. Newton steps that leave
// the current bracket are replaced by bisection. After |g| <= tol the
// iteration keeps taking in-bracket Newton steps until they stop moving, so
// the returned root is accurate enough for implicit differentiation.
RootFindResult solve_gamma(const LyapunovFunction& v, const ParamStore& params, const Vec& y,
                           double target, const StabilityConfig& cfg);

struct ScalingInfo {
  bool intervened = false;
  double gamma = 1.0;
  std::optional<RootFindResult> root;
};

// Records the scale factor applied to a prediction y so that V(gamma y) is
// at most target (up to the root-finder tolerance). Convex mode uses the
// closed form; Implicit mode solves for the root off-tape and records one
// Newton map F(s) = s - g(s)/g'(s) at the root, whose parameter derivative
// equals that of the root. Other modes return the constant 1.
Var record_scaling(Tape& tape, const LyapunovFunction& v, const ParamStore& params, Var y,
                   Var target, const StabilityConfig& cfg, ScalingInfo* info = nullptr);

struct StepInfo {
  ScalingInfo scaling;
  bool projected = false;
  double v_x = 0.0;
  double v_out = 0.0;
  // V(x) (1 - beta) < tol: the decrease bound is no longer strict here.
  bool below_tolerance_floor = false;
};

struct StableModelSpec {
  Eigen::Index n = 2;
  std::vector<Eigen::Index> hidden = {25, 25};
  Activation fhat_activation = Activation::ReLU;
  LyapunovOptions lyapunov;
  StabilityConfig stability;
};

// Nominal network f-hat wrapped by a stability mode and a Lyapunov function.
class StableModel {
 public:
  static StableModel create(const StableModelSpec& spec, std::uint64_t seed);

  StableModel(ParamStore params, Mlp fhat, std::unique_ptr<LyapunovFunction> lyapunov,
              StabilityConfig cfg);

  Eigen::Index dim() const { return fhat_.in_dim(); }
  const StabilityConfig& config() const { return cfg_; }
  StabilityConfig& config() { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const Mlp& fhat() const { return fhat_; }
  const LyapunovFunction& lyapunov() const { return *lyapunov_; }
  const std::optional<StableModelSpec>& spec() const { return spec_; }

  double v(const Vec& x) const { return lyapunov_->value(params_, x); }
  // Prediction before any stability correction: f-hat(x), or x + f-hat(x)
  // with the integrating structure.
  Vec nominal(const Vec& x) const;

  Vec convex_scale_step(const Vec& x, StepInfo* info = nullptr) const;
  RootFindResult solve_gamma(const Vec& x, const Vec& y) const;
  Vec implicit_step(const Vec& x, StepInfo* info = nullptr) const;
  Vec projection_step(const Vec& x, StepInfo* info = nullptr) const;
  Vec step(const Vec& x, StepInfo* info = nullptr) const;
  Trajectory rollout(const Vec& x0, int steps) const;

  // Taped step for training. Implicit mode uses the fixed-point backward.
  Var record_step(Tape& tape, const Vec& x, StepInfo* info = nullptr) const;

  // Flat parameter gradients of upstream . x_next through the implicit
  // layer (regardless of the configured mode). The fixed-point form
  // differentiates one Newton map at the root on a tape; the direct form
  // evaluates the closed-form Jacobians of the root with three first-order
  // sweeps. On the sufficient-decrease branch both reduce to plain backprop.
  Vec implicit_backward_fixed_point(const Vec& x, const Vec& upstream);
  Vec implicit_backward_direct(const Vec& x, const Vec& upstream);

  void enforce_constraints() { lyapunov_->enforce_constraints(params_); }

 private:
  Var record_nominal(Tape& tape, Var x) const;
  Var record_implicit(Tape& tape, const Vec& x, StepInfo* info) const;
  Var record_convex(Tape& tape, const Vec& x, StepInfo* info) const;
  Var record_projection(Tape& tape, const Vec& x, StepInfo* info) const;
  Vec gradient_of(const std::function<Var(Tape&)>& loss);

  ParamStore params_;
  Mlp fhat_;
  std::unique_ptr<LyapunovFunction> lyapunov_;
  StabilityConfig cfg_;
  std::optional<StableModelSpec> spec_;
};

}  // namespace stabledyn
