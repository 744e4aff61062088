#pragma once

#include "stabledyn/mlp.hpp"

#include <random>
#include <string>
#include <utility>
#include <vector>

namespace stabledyn {

enum class LyapunovVariant { ICNN, LNN, ConvexLNN };

std::string to_string(LyapunovVariant v);
LyapunovVariant parse_lyapunov_variant(const std::string& s);

// Input-convex body: z1 = s(Wx0 x + b0), z_{l+1} = s(Uz_l z_l + Wx_l x + b_l),
// output = Uz_L z_L + Wx_L x + b_L. Every Uz entry is kept >= 0, so with a
// convex nondecreasing s each output coordinate is convex in x.
class IcnnBody {
 public:
  IcnnBody() = default;
  IcnnBody(ParamStore& params, const std::string& prefix, std::vector<Eigen::Index> dims, double smooth_d);

  void initialize(ParamStore& params, std::mt19937_64& rng) const;
  void clamp_z_path(ParamStore& params) const;

  Vec forward(const ParamStore& params, const Vec& x) const;
  DualVar forward_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const;
  Var forward(Tape& tape, const ParamStore& params, Var x) const;

  const std::vector<ParamId>& z_weights() const { return uz_; }
  Eigen::Index out_dim() const { return dims_.back(); }

 private:
  std::vector<Eigen::Index> dims_;
  double d_ = 0.1;
  std::vector<ParamId> wx_;
  std::vector<ParamId> bias_;
  std::vector<ParamId> uz_;  // uz_[l] feeds layer l+1
};

// Positive definite V with V(0) = 0, evaluable plainly or on a tape.
class LyapunovFunction {
 public:
  virtual ~LyapunovFunction() = default;

  virtual Eigen::Index dim() const = 0;
  virtual bool is_convex() const = 0;
  virtual double value(const ParamStore& params, const Vec& x) const = 0;
  virtual Var value(Tape& tape, const ParamStore& params, Var x) const = 0;
  // V(x) and its derivative along dx.
  virtual DualVar value_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const = 0;
  virtual void enforce_constraints(ParamStore&) const {}

  // dV/dx by a reverse sweep over a private tape.
  Vec gradient(const ParamStore& params, const Vec& x) const;
  std::pair<double, Vec> value_and_gradient(const ParamStore& params, const Vec& x) const;
  // dV/dx recorded on the tape (one directional derivative per coordinate),
  // so it can itself be differentiated with respect to the parameters.
  Var gradient(Tape& tape, const ParamStore& params, Var x) const;
};

// V(x) = x^T P x with P a parameter (kept as given, not symmetrized).
class QuadraticLyapunov final : public LyapunovFunction {
 public:
  QuadraticLyapunov(ParamStore& params, const std::string& prefix, const Mat& p);

  Eigen::Index dim() const override { return n_; }
  bool is_convex() const override { return true; }
  double value(const ParamStore& params, const Vec& x) const override;
  Var value(Tape& tape, const ParamStore& params, Var x) const override;
  DualVar value_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const override;

  ParamId p_id() const { return p_; }

 private:
  Eigen::Index n_ = 0;
  ParamId p_;
};

struct LyapunovOptions {
  LyapunovVariant variant = LyapunovVariant::ICNN;
  std::vector<Eigen::Index> hidden = {25, 25};
  double epsilon = 1e-3;
  double smooth_relu_d = 0.1;
};

// Candidate Lyapunov function with V(0) = 0 and V(x) >= epsilon * |x|^2.
//   ICNN:      V = s(g(x) - g(0)) + eps |x|^2, g input-convex and scalar
//   LNN:       V = |phi(x) - phi(0)|^2 + eps |x|^2, phi a tanh network
//   ConvexLNN: V = |s(h(x) - h(0))|^2 + eps |x|^2, h input-convex
// where s is the smooth ReLU.
class LyapunovNet final : public LyapunovFunction {
 public:
  LyapunovNet() = default;
  LyapunovNet(ParamStore& params, const std::string& prefix, Eigen::Index n, LyapunovOptions opts);

  void initialize(ParamStore& params, std::mt19937_64& rng) const;

  double value(const ParamStore& params, const Vec& x) const override;
  Var value(Tape& tape, const ParamStore& params, Var x) const override;
  DualVar value_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const override;

  // Clamps z-path weights at zero. No-op for the LNN variant.
  void enforce_constraints(ParamStore& params) const override;
  bool constraints_hold(const ParamStore& params) const;

  bool is_convex() const override { return opts_.variant != LyapunovVariant::LNN; }
  LyapunovVariant variant() const { return opts_.variant; }
  const LyapunovOptions& options() const { return opts_; }
  Eigen::Index dim() const override { return n_; }
  double epsilon() const { return opts_.epsilon; }
  const IcnnBody& icnn() const { return icnn_; }

 private:
  Eigen::Index n_ = 0;
  LyapunovOptions opts_;
  IcnnBody icnn_;
  Mlp phi_;
};

}  // namespace stabledyn
