#pragma once

#include "stabledyn/lyapunov.hpp"
#include "stabledyn/mdn.hpp"
#include "stabledyn/stable_model.hpp"

#include <cmath>
#include <memory>
#include <random>

namespace testutil {

using stabledyn::Mat;
using stabledyn::Vec;

inline Vec vec2(double a, double b) {
  Vec v(2);
  v << a, b;
  return v;
}

inline Vec uniform_vec(std::mt19937_64& rng, Eigen::Index n, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = u(rng);
  return v;
}

inline Mat uniform_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
  return m;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

inline double max_rel_err(const Vec& a, const Vec& b) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) worst = std::max(worst, rel_err(a(i), b(i)));
  return worst;
}

// V(x) = |x|^2 + c |x|^4 with c a parameter; convex for c >= 0.
class QuarticLyapunov final : public stabledyn::LyapunovFunction {
 public:
  QuarticLyapunov(stabledyn::ParamStore& ps, const std::string& prefix, Eigen::Index n, double c)
      : n_(n), c_(ps.add(prefix + ".c", 1, 1)) {
    ps.value(c_)(0, 0) = c;
  }
  Eigen::Index dim() const override { return n_; }
  bool is_convex() const override { return true; }
  double value(const stabledyn::ParamStore& ps, const Vec& x) const override {
    const double s = x.squaredNorm();
    return s + ps.value(c_)(0, 0) * s * s;
  }
  stabledyn::Var value(stabledyn::Tape& tape, const stabledyn::ParamStore& ps,
                       stabledyn::Var x) const override {
    stabledyn::Var s = stabledyn::dot(x, x);
    return s + stabledyn::hadamard(tape.param(ps, c_), stabledyn::hadamard(s, s));
  }
  stabledyn::DualVar value_dual(stabledyn::Tape& tape, const stabledyn::ParamStore& ps,
                                stabledyn::Var x, stabledyn::Var dx) const override {
    using namespace stabledyn;
    Var s = dot(x, x);
    Var c = tape.param(ps, c_);
    Var ds = scale(tape.constant(2.0), dot(x, dx));
    Var v = s + hadamard(c, hadamard(s, s));
    Var dv = ds + hadamard(scale(tape.constant(2.0), hadamard(c, s)), ds);
    return {v, dv};
  }

 private:
  Eigen::Index n_;
  stabledyn::ParamId c_;
};

// Single linear layer f(x) = W x + b with identity activation.
inline stabledyn::Mlp linear_map(stabledyn::ParamStore& ps, const std::string& prefix, const Mat& w,
                                 const Vec& b) {
  stabledyn::MlpOptions mo;
  mo.hidden = stabledyn::Activation::Identity;
  stabledyn::Mlp m(ps, prefix, {w.cols(), w.rows()}, mo);
  ps.value(m.weights()[0]) = w;
  ps.value(*ps.find(prefix + ".b0")) = b;
  return m;
}

// Model with f(x) = W x + b and V(x) = |x|^2.
inline stabledyn::StableModel quadratic_model(const Mat& w, const Vec& b, stabledyn::StabilityMode mode,
                                              bool integrating = false, double beta = 0.99) {
  stabledyn::ParamStore ps;
  stabledyn::Mlp f = linear_map(ps, "fhat", w, b);
  auto v = std::make_unique<stabledyn::QuadraticLyapunov>(ps, "V", Mat::Identity(w.rows(), w.rows()));
  stabledyn::StabilityConfig cfg;
  cfg.mode = mode;
  cfg.beta = beta;
  cfg.integrating = integrating;
  return stabledyn::StableModel(std::move(ps), std::move(f), std::move(v), cfg);
}

// Model mapping every input to the constant c.
inline stabledyn::StableModel constant_model(const Vec& c, stabledyn::StabilityMode mode) {
  return quadratic_model(Mat::Zero(c.size(), c.size()), c, mode);
}

inline stabledyn::StableModel random_model(std::uint64_t seed, stabledyn::StabilityMode mode,
                                           stabledyn::LyapunovVariant variant, Eigen::Index n = 2,
                                           bool integrating = false) {
  stabledyn::StableModelSpec spec;
  spec.n = n;
  spec.lyapunov.variant = variant;
  spec.stability.mode = mode;
  spec.stability.integrating = integrating;
  return stabledyn::StableModel::create(spec, seed);
}

inline stabledyn::MdnHead random_mdn(std::uint64_t seed, stabledyn::StabilityMode mode,
                                     stabledyn::LyapunovVariant variant, int k = 2, Eigen::Index n = 2) {
  stabledyn::MdnSpec spec;
  spec.n = n;
  spec.k = k;
  spec.lyapunov.variant = variant;
  spec.stability.mode = mode;
  return stabledyn::MdnHead::create(spec, seed);
}

}  // namespace testutil
