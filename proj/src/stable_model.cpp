#include "stabledyn/stable_model.hpp"

#include <cmath>
#include <limits>

namespace stabledyn {

std::string to_string(StabilityMode m) {
  switch (m) {
    case StabilityMode::None: return "none";
    case StabilityMode::Convex: return "convex";
    case StabilityMode::Implicit: return "implicit";
    case StabilityMode::Projection: return "projection";
  }
  return "none";
}

StabilityMode parse_stability_mode(const std::string& s) {
  if (s == "none") return StabilityMode::None;
  if (s == "convex") return StabilityMode::Convex;
  if (s == "implicit") return StabilityMode::Implicit;
  if (s == "projection") return StabilityMode::Projection;
  throw std::invalid_argument("unknown stability mode: " + s);
}

void StabilityConfig::validate() const {
  if (!(beta > 0.0 && beta < 1.0)) throw std::invalid_argument("beta must lie in (0, 1)");
  if (!(rootfind_tol > 0.0)) throw std::invalid_argument("root-finder tolerance must be positive");
  if (max_newton_iters < 0 || max_bisect_iters < 0) {
    throw std::invalid_argument("iteration budgets must be nonnegative");
  }
}

double convex_gamma(double v_next, double target) {
  if (v_next <= target) return 1.0;
  const double relu = std::max(target - v_next, 0.0);
  return (target - relu) / v_next;
}

RootFindResult solve_gamma(const LyapunovFunction& v, const ParamStore& params, const Vec& y,
                           double target, const StabilityConfig& cfg) {
  if (!(target > 0.0)) throw std::invalid_argument("solve_gamma: target must be positive");

  auto eval = [&](double gamma, double& g, double& dg) {
    auto [value, grad] = v.value_and_gradient(params, gamma * y);
    g = value - target;
    dg = grad.dot(y);
  };

  RootFindResult r;
  double lo = 0.0;
  double hi = 1.0;
  double gamma = 1.0;
  double g = 0.0;
  double dg = 0.0;
  eval(gamma, g, dg);
  // s = 1 already within tolerance of the target.
  if (!(g > 0.0) && g >= -cfg.rootfind_tol) {
    r.residual = g;
    return r;
  }
  if (!(g > 0.0)) {
    throw std::invalid_argument("solve_gamma: no intervention needed (V(y) <= target)");
  }

  for (;;) {
    const bool within = std::abs(g) <= cfg.rootfind_tol;
    double candidate = std::numeric_limits<double>::quiet_NaN();
    if (dg > 0.0 && std::isfinite(dg)) candidate = gamma - g / dg;
    const bool newton_ok = std::isfinite(candidate) && candidate > lo && candidate < hi;

    if (within) {
      const bool moving =
          std::abs(candidate - gamma) > 4.0 * std::numeric_limits<double>::epsilon() * gamma;
      if (!newton_ok || !moving || r.newton_iters >= cfg.max_newton_iters) break;
      gamma = candidate;
      ++r.newton_iters;
    } else if (newton_ok && r.newton_iters < cfg.max_newton_iters) {
      gamma = candidate;
      ++r.newton_iters;
    } else {
      if (r.bisect_iters >= cfg.max_bisect_iters) {
        throw RootFindError("solve_gamma: iteration budget exhausted with |g| = " +
                                std::to_string(std::abs(g)),
                            lo, hi);
      }
      gamma = 0.5 * (lo + hi);
      ++r.bisect_iters;
    }
    eval(gamma, g, dg);
    if (g > 0.0) {
      hi = gamma;
    } else {
      lo = gamma;
    }
  }
  r.gamma_star = gamma;
  r.residual = g;
  return r;
}

Var record_scaling(Tape& tape, const LyapunovFunction& v, const ParamStore& params, Var y,
                   Var target, const StabilityConfig& cfg, ScalingInfo* info) {
  ScalingInfo local;
  ScalingInfo& out = info ? *info : local;
  out = ScalingInfo{};
  if (cfg.mode != StabilityMode::Convex && cfg.mode != StabilityMode::Implicit) {
    return tape.constant(1.0);
  }

  const double t = target.scalar();
  if (cfg.mode == StabilityMode::Convex) {
    Var vy = v.value(tape, params, y);
    if (vy.scalar() <= t || vy.scalar() < kOriginGuard) return tape.constant(1.0);
    out.intervened = true;
    Var gamma = divide(target - activation(target - vy, Activation::ReLU), vy);
    out.gamma = gamma.scalar();
    return gamma;
  }

  const Vec yv = y.vec();
  const double vy = v.value(params, yv);
  if (vy <= t || vy < kOriginGuard) return tape.constant(1.0);
  out.intervened = true;
  if (!(t > 0.0)) {
    out.gamma = 0.0;
    return tape.constant(0.0);
  }
  const RootFindResult root = solve_gamma(v, params, yv, t, cfg);
  out.root = root;

  Var gs = tape.constant(root.gamma_star);
  DualVar h = v.value_dual(tape, params, scale(gs, y), y);
  if (!(h.tangent.scalar() > 0.0)) {
    throw NumericalError("implicit layer: g'(gamma*) is not positive");
  }
  Var gamma = gs - divide(h.value - target, h.tangent);
  out.gamma = gamma.scalar();
  return gamma;
}

StableModel StableModel::create(const StableModelSpec& spec, std::uint64_t seed) {
  spec.stability.validate();
  ParamStore params;
  std::vector<Eigen::Index> dims{spec.n};
  dims.insert(dims.end(), spec.hidden.begin(), spec.hidden.end());
  dims.push_back(spec.n);
  MlpOptions mo;
  mo.hidden = spec.fhat_activation;
  Mlp fhat(params, "fhat", dims, mo);
  auto lyap = std::make_unique<LyapunovNet>(params, "V", spec.n, spec.lyapunov);

  std::mt19937_64 rng(seed);
  fhat.initialize(params, rng);
  lyap->initialize(params, rng);

  StableModel m(std::move(params), std::move(fhat), std::move(lyap), spec.stability);
  m.spec_ = spec;
  return m;
}

StableModel::StableModel(ParamStore params, Mlp fhat, std::unique_ptr<LyapunovFunction> lyapunov,
                         StabilityConfig cfg)
    : params_(std::move(params)), fhat_(std::move(fhat)), lyapunov_(std::move(lyapunov)), cfg_(cfg) {
  cfg_.validate();
  if (!lyapunov_) throw std::invalid_argument("StableModel needs a Lyapunov function");
  if (fhat_.in_dim() != fhat_.out_dim() || fhat_.in_dim() != lyapunov_->dim()) {
    throw DimensionError("f-hat must map R^n to R^n with n matching V");
  }
  if (cfg_.mode == StabilityMode::Convex && !lyapunov_->is_convex()) {
    throw std::invalid_argument(
        "convex scaling requires a convex Lyapunov function (icnn or convex-lnn)");
  }
}

Vec StableModel::nominal(const Vec& x) const {
  Vec y = fhat_.forward(params_, x);
  if (cfg_.integrating) y += x;
  return y;
}

Vec StableModel::convex_scale_step(const Vec& x, StepInfo* info) const {
  if (!lyapunov_->is_convex()) throw std::logic_error("convex scaling requires a convex V");
  const Vec y = nominal(x);
  const double vx = v(x);
  const double target = cfg_.beta * vx;
  const double vy = v(y);
  double gamma = 1.0;
  if (vy > target && vy >= kOriginGuard) gamma = convex_gamma(vy, target);
  Vec out = gamma * y;
  if (info) {
    *info = StepInfo{};
    info->scaling.intervened = gamma != 1.0;
    info->scaling.gamma = gamma;
    info->v_x = vx;
    info->v_out = v(out);
    info->below_tolerance_floor = vx * (1.0 - cfg_.beta) < cfg_.rootfind_tol;
  }
  return out;
}

RootFindResult StableModel::solve_gamma(const Vec& x, const Vec& y) const {
  return stabledyn::solve_gamma(*lyapunov_, params_, y, cfg_.beta * v(x), cfg_);
}

Vec StableModel::implicit_step(const Vec& x, StepInfo* info) const {
  const Vec y = nominal(x);
  const double vx = v(x);
  const double target = cfg_.beta * vx;
  const double vy = v(y);
  ScalingInfo scaling;
  if (vy > target && vy >= kOriginGuard) {
    scaling.intervened = true;
    if (target > 0.0) {
      scaling.root = stabledyn::solve_gamma(*lyapunov_, params_, y, target, cfg_);
      scaling.gamma = scaling.root->gamma_star;
    } else {
      scaling.gamma = 0.0;
    }
  }
  Vec out = scaling.gamma * y;
  if (info) {
    *info = StepInfo{};
    info->scaling = scaling;
    info->v_x = vx;
    info->v_out = v(out);
    info->below_tolerance_floor = vx * (1.0 - cfg_.beta) < cfg_.rootfind_tol;
  }
  return out;
}

Vec StableModel::projection_step(const Vec& x, StepInfo* info) const {
  const Vec y = nominal(x);
  if (info) *info = StepInfo{};
  const Vec grad = lyapunov_->gradient(params_, x);
  const double norm2 = grad.squaredNorm();
  if (x.isZero(0.0) || norm2 == 0.0) return y;
  const double ascent = grad.dot(y - x);
  if (ascent <= 0.0) return y;
  if (info) info->projected = true;
  return y - (ascent / norm2) * grad;
}

Vec StableModel::step(const Vec& x, StepInfo* info) const {
  if (x.size() != dim()) {
    throw DimensionError("state has length " + std::to_string(x.size()) + ", model expects " +
                         std::to_string(dim()));
  }
  switch (cfg_.mode) {
    case StabilityMode::None: {
      if (info) *info = StepInfo{};
      return nominal(x);
    }
    case StabilityMode::Convex: return convex_scale_step(x, info);
    case StabilityMode::Implicit: return implicit_step(x, info);
    case StabilityMode::Projection: return projection_step(x, info);
  }
  throw std::logic_error("unreachable");
}

Trajectory StableModel::rollout(const Vec& x0, int steps) const {
  if (steps < 0) throw std::invalid_argument("rollout: steps must be nonnegative");
  Trajectory traj;
  traj.states.reserve(static_cast<std::size_t>(steps) + 1);
  traj.states.push_back(x0);
  traj.v_values.push_back(v(x0));
  for (int t = 0; t < steps; ++t) {
    traj.states.push_back(step(traj.states.back()));
    traj.v_values.push_back(v(traj.states.back()));
  }
  return traj;
}

Var StableModel::record_nominal(Tape& tape, Var x) const {
  Var y = fhat_.forward(tape, params_, x);
  return cfg_.integrating ? x + y : y;
}

Var StableModel::record_convex(Tape& tape, const Vec& x, StepInfo* info) const {
  StabilityConfig cfg = cfg_;
  cfg.mode = StabilityMode::Convex;
  Var xv = tape.constant(Mat(x));
  Var target = scale(tape.constant(cfg_.beta), lyapunov_->value(tape, params_, xv));
  Var y = record_nominal(tape, xv);
  ScalingInfo scaling;
  Var out = scale(record_scaling(tape, *lyapunov_, params_, y, target, cfg, &scaling), y);
  if (info) {
    *info = StepInfo{};
    info->scaling = scaling;
    info->v_x = target.scalar() / cfg_.beta;
  }
  return out;
}

Var StableModel::record_implicit(Tape& tape, const Vec& x, StepInfo* info) const {
  StabilityConfig cfg = cfg_;
  cfg.mode = StabilityMode::Implicit;
  Var xv = tape.constant(Mat(x));
  Var target = scale(tape.constant(cfg_.beta), lyapunov_->value(tape, params_, xv));
  Var y = record_nominal(tape, xv);
  ScalingInfo scaling;
  Var out = scale(record_scaling(tape, *lyapunov_, params_, y, target, cfg, &scaling), y);
  if (info) {
    *info = StepInfo{};
    info->scaling = scaling;
    info->v_x = target.scalar() / cfg_.beta;
  }
  return out;
}

Var StableModel::record_projection(Tape& tape, const Vec& x, StepInfo* info) const {
  Var xv = tape.constant(Mat(x));
  Var y = record_nominal(tape, xv);
  if (info) *info = StepInfo{};
  if (x.isZero(0.0)) return y;
  Var grad = lyapunov_->gradient(tape, params_, xv);
  Var norm2 = dot(grad, grad);
  if (norm2.scalar() == 0.0) return y;
  Var ascent = dot(grad, y - xv);
  if (ascent.scalar() <= 0.0) return y;
  if (info) info->projected = true;
  Var coeff = divide(activation(ascent, Activation::ReLU), norm2);
  return y - scale(coeff, grad);
}

Var StableModel::record_step(Tape& tape, const Vec& x, StepInfo* info) const {
  if (x.size() != dim()) throw DimensionError("state has wrong length for this model");
  switch (cfg_.mode) {
    case StabilityMode::None:
      if (info) *info = StepInfo{};
      return record_nominal(tape, tape.constant(Mat(x)));
    case StabilityMode::Convex: return record_convex(tape, x, info);
    case StabilityMode::Implicit: return record_implicit(tape, x, info);
    case StabilityMode::Projection: return record_projection(tape, x, info);
  }
  throw std::logic_error("unreachable");
}

Vec StableModel::gradient_of(const std::function<Var(Tape&)>& loss) {
  const Vec saved = params_.flat_grads();
  params_.zero_grads();
  {
    Tape tape;
    Var root = loss(tape);
    tape.backward(root, params_);
  }
  Vec grads = params_.flat_grads();
  params_.set_flat_grads(saved);
  return grads;
}

Vec StableModel::implicit_backward_fixed_point(const Vec& x, const Vec& upstream) {
  return gradient_of([&](Tape& tape) {
    Var out = record_implicit(tape, x, nullptr);
    return dot(tape.constant(Mat(upstream)), out);
  });
}

Vec StableModel::implicit_backward_direct(const Vec& x, const Vec& upstream) {
  const Vec y = nominal(x);
  const double vx = v(x);
  const double target = cfg_.beta * vx;
  const double vy = v(y);

  if (vy <= target || vy < kOriginGuard) {
    return gradient_of([&](Tape& tape) {
      return dot(tape.constant(Mat(upstream)), record_nominal(tape, tape.constant(Mat(x))));
    });
  }
  if (!(target > 0.0)) return Vec::Zero(static_cast<Eigen::Index>(params_.scalar_count()));

  const double gamma = stabledyn::solve_gamma(*lyapunov_, params_, y, target, cfg_).gamma_star;
  const Vec z = gamma * y;
  const Vec grad_v = lyapunov_->gradient(params_, z);
  const double dg = grad_v.dot(y);
  if (!(dg > 0.0)) throw NumericalError("implicit layer: g'(gamma*) is not positive");
  const double uy = upstream.dot(y);

  // dx*/dy = gamma I - y (dg/dy) / g',  dg/dy = gamma grad V(z)^T
  const Vec dl_dy = gamma * upstream - (uy / dg) * gamma * grad_v;
  // dx*/dT = y / g'; V's parameters also enter g directly through V(z).
  const double dl_dt = uy / dg;

  return gradient_of([&](Tape& tape) {
    Var through_y = dot(tape.constant(Mat(dl_dy)), record_nominal(tape, tape.constant(Mat(x))));
    Var through_g = scale(tape.constant(-uy / dg), lyapunov_->value(tape, params_, tape.constant(Mat(z))));
    Var through_t = scale(tape.constant(cfg_.beta * dl_dt),
                          lyapunov_->value(tape, params_, tape.constant(Mat(x))));
    return through_y + through_g + through_t;
  });
}

}  // namespace stabledyn
