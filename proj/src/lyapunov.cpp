#include "stabledyn/lyapunov.hpp"

#include <cmath>

namespace stabledyn {

std::string to_string(LyapunovVariant v) {
  switch (v) {
    case LyapunovVariant::ICNN: return "icnn";
    case LyapunovVariant::LNN: return "lnn";
    case LyapunovVariant::ConvexLNN: return "convex-lnn";
  }
  return "icnn";
}

LyapunovVariant parse_lyapunov_variant(const std::string& s) {
  if (s == "icnn") return LyapunovVariant::ICNN;
  if (s == "lnn") return LyapunovVariant::LNN;
  if (s == "convex-lnn") return LyapunovVariant::ConvexLNN;
  throw std::invalid_argument("unknown Lyapunov variant: " + s);
}

QuadraticLyapunov::QuadraticLyapunov(ParamStore& params, const std::string& prefix, const Mat& p)
    : n_(p.rows()) {
  if (p.rows() != p.cols()) throw DimensionError("quadratic Lyapunov matrix must be square");
  p_ = params.add(prefix + ".P", p.rows(), p.cols());
  params.value(p_) = p;
}

double QuadraticLyapunov::value(const ParamStore& params, const Vec& x) const {
  if (x.size() != n_) throw DimensionError("V: input has wrong length");
  return x.dot(params.value(p_) * x);
}

Var QuadraticLyapunov::value(Tape& tape, const ParamStore& params, Var x) const {
  if (x.rows() != n_) throw DimensionError("V: input has wrong length");
  return dot(x, matvec(tape.param(params, p_), x));
}

DualVar QuadraticLyapunov::value_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const {
  if (x.rows() != n_ || dx.rows() != n_) throw DimensionError("V: input has wrong length");
  Var p = tape.param(params, p_);
  return {dot(x, matvec(p, x)), dot(dx, matvec(p, x)) + dot(x, matvec(p, dx))};
}

IcnnBody::IcnnBody(ParamStore& params, const std::string& prefix, std::vector<Eigen::Index> dims,
                   double smooth_d)
    : dims_(std::move(dims)), d_(smooth_d) {
  if (dims_.size() < 2) throw DimensionError("ICNN needs at least input and output dims");
  const Eigen::Index n = dims_.front();
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    const auto tag = std::to_string(l);
    wx_.push_back(params.add(prefix + ".Wx" + tag, dims_[l + 1], n));
    bias_.push_back(params.add(prefix + ".b" + tag, dims_[l + 1], 1));
    if (l > 0) uz_.push_back(params.add(prefix + ".Uz" + tag, dims_[l + 1], dims_[l]));
  }
}

void IcnnBody::initialize(ParamStore& params, std::mt19937_64& rng) const {
  const auto n = static_cast<double>(dims_.front());
  for (std::size_t l = 0; l < wx_.size(); ++l) {
    const double fan_in = l == 0 ? n : n + static_cast<double>(dims_[l]);
    std::uniform_real_distribution<double> dist(-1.0 / std::sqrt(fan_in), 1.0 / std::sqrt(fan_in));
    for (auto& w : params.value(wx_[l]).reshaped()) w = dist(rng);
    for (auto& b : params.value(bias_[l]).reshaped()) b = dist(rng);
    if (l > 0) {
      for (auto& u : params.value(uz_[l - 1]).reshaped()) u = dist(rng);
    }
  }
  clamp_z_path(params);
}

void IcnnBody::clamp_z_path(ParamStore& params) const {
  for (auto id : uz_) params.value(id) = params.value(id).cwiseMax(0.0);
}

Vec IcnnBody::forward(const ParamStore& params, const Vec& x) const {
  if (x.size() != dims_.front()) throw DimensionError("ICNN input has wrong length");
  Vec z;
  for (std::size_t l = 0; l < wx_.size(); ++l) {
    Vec pre = params.value(wx_[l]) * x + params.value(bias_[l]).col(0);
    if (l > 0) pre += params.value(uz_[l - 1]) * z;
    if (l + 1 < wx_.size()) {
      z = pre.unaryExpr([&](double u) { return smooth_relu(u, d_); });
    } else {
      z = pre;
    }
  }
  return z;
}

DualVar IcnnBody::forward_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const {
  if (x.rows() != dims_.front()) throw DimensionError("ICNN input has wrong length");
  Var z;
  Var dz;
  for (std::size_t l = 0; l < wx_.size(); ++l) {
    Var wx = tape.param(params, wx_[l]);
    Var pre = matvec(wx, x) + tape.param(params, bias_[l]);
    Var dpre = matvec(wx, dx);
    if (l > 0) {
      Var uz = tape.param(params, uz_[l - 1]);
      pre = pre + matvec(uz, z);
      dpre = dpre + matvec(uz, dz);
    }
    if (l + 1 < wx_.size()) {
      z = activation(pre, Activation::SmoothReLU, d_);
      dz = hadamard(activation_deriv(pre, Activation::SmoothReLU, d_), dpre);
    } else {
      z = pre;
      dz = dpre;
    }
  }
  return {z, dz};
}

Var IcnnBody::forward(Tape& tape, const ParamStore& params, Var x) const {
  if (x.rows() != dims_.front()) throw DimensionError("ICNN input has wrong length");
  Var z;
  for (std::size_t l = 0; l < wx_.size(); ++l) {
    Var pre = matvec(tape.param(params, wx_[l]), x) + tape.param(params, bias_[l]);
    if (l > 0) pre = pre + matvec(tape.param(params, uz_[l - 1]), z);
    z = l + 1 < wx_.size() ? activation(pre, Activation::SmoothReLU, d_) : pre;
  }
  return z;
}

LyapunovNet::LyapunovNet(ParamStore& params, const std::string& prefix, Eigen::Index n,
                         LyapunovOptions opts)
    : n_(n), opts_(std::move(opts)) {
  if (n <= 0) throw DimensionError("Lyapunov net dimension must be positive");
  if (opts_.hidden.empty()) throw DimensionError("Lyapunov net needs at least one hidden layer");
  if (!(opts_.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  std::vector<Eigen::Index> dims{n};
  dims.insert(dims.end(), opts_.hidden.begin(), opts_.hidden.end());
  switch (opts_.variant) {
    case LyapunovVariant::ICNN:
      dims.push_back(1);
      icnn_ = IcnnBody(params, prefix + ".icnn", dims, opts_.smooth_relu_d);
      break;
    case LyapunovVariant::ConvexLNN:
      icnn_ = IcnnBody(params, prefix + ".icnn", dims, opts_.smooth_relu_d);
      break;
    case LyapunovVariant::LNN: {
      MlpOptions mo;
      mo.hidden = Activation::Tanh;
      mo.output = Activation::Tanh;
      mo.first_layer_bias = false;
      phi_ = Mlp(params, prefix + ".phi", dims, mo);
      break;
    }
  }
}

void LyapunovNet::initialize(ParamStore& params, std::mt19937_64& rng) const {
  if (opts_.variant == LyapunovVariant::LNN) {
    phi_.initialize(params, rng);
  } else {
    icnn_.initialize(params, rng);
  }
}

double LyapunovNet::value(const ParamStore& params, const Vec& x) const {
  if (x.size() != n_) {
    throw DimensionError("V: expected input of length " + std::to_string(n_) + ", got " +
                         std::to_string(x.size()));
  }
  const double floor = opts_.epsilon * x.squaredNorm();
  const Vec zero = Vec::Zero(n_);
  const double d = opts_.smooth_relu_d;
  switch (opts_.variant) {
    case LyapunovVariant::ICNN:
      return smooth_relu(icnn_.forward(params, x)(0) - icnn_.forward(params, zero)(0), d) + floor;
    case LyapunovVariant::ConvexLNN: {
      const Vec h = icnn_.forward(params, x) - icnn_.forward(params, zero);
      return h.unaryExpr([&](double u) { return smooth_relu(u, d); }).squaredNorm() + floor;
    }
    case LyapunovVariant::LNN:
      return (phi_.forward(params, x) - phi_.forward(params, zero)).squaredNorm() + floor;
  }
  return floor;
}

DualVar LyapunovNet::value_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const {
  if (x.rows() != n_ || dx.rows() != n_) throw DimensionError("V: input has wrong length");
  const double d = opts_.smooth_relu_d;
  Var eps = tape.constant(opts_.epsilon);
  Var two_eps = tape.constant(2.0 * opts_.epsilon);
  Var floor = scale(eps, dot(x, x));
  Var dfloor = scale(two_eps, dot(x, dx));
  Var zero = tape.constant(Mat::Zero(n_, 1));
  Var two = tape.constant(2.0);

  switch (opts_.variant) {
    case LyapunovVariant::ICNN: {
      DualVar g = icnn_.forward_dual(tape, params, x, dx);
      Var shifted = g.value - icnn_.forward(tape, params, zero);
      Var v = activation(shifted, Activation::SmoothReLU, d) + floor;
      Var dv = hadamard(activation_deriv(shifted, Activation::SmoothReLU, d), g.tangent) + dfloor;
      return {v, dv};
    }
    case LyapunovVariant::ConvexLNN: {
      DualVar h = icnn_.forward_dual(tape, params, x, dx);
      Var shifted = h.value - icnn_.forward(tape, params, zero);
      Var phi = activation(shifted, Activation::SmoothReLU, d);
      Var dphi = hadamard(activation_deriv(shifted, Activation::SmoothReLU, d), h.tangent);
      return {dot(phi, phi) + floor, scale(two, dot(phi, dphi)) + dfloor};
    }
    case LyapunovVariant::LNN: {
      DualVar p = phi_.forward_dual(tape, params, x, dx);
      Var diff = p.value - phi_.forward(tape, params, zero);
      return {dot(diff, diff) + floor, scale(two, dot(diff, p.tangent)) + dfloor};
    }
  }
  throw std::logic_error("unreachable");
}

Var LyapunovNet::value(Tape& tape, const ParamStore& params, Var x) const {
  if (x.rows() != n_) {
    throw DimensionError("V: expected input of length " + std::to_string(n_) + ", got " +
                         std::to_string(x.rows()));
  }
  const double d = opts_.smooth_relu_d;
  Var floor = scale(tape.constant(opts_.epsilon), dot(x, x));
  Var zero = tape.constant(Mat::Zero(n_, 1));
  switch (opts_.variant) {
    case LyapunovVariant::ICNN: {
      Var shifted = icnn_.forward(tape, params, x) - icnn_.forward(tape, params, zero);
      return activation(shifted, Activation::SmoothReLU, d) + floor;
    }
    case LyapunovVariant::ConvexLNN: {
      Var shifted = icnn_.forward(tape, params, x) - icnn_.forward(tape, params, zero);
      Var phi = activation(shifted, Activation::SmoothReLU, d);
      return dot(phi, phi) + floor;
    }
    case LyapunovVariant::LNN: {
      Var diff = phi_.forward(tape, params, x) - phi_.forward(tape, params, zero);
      return dot(diff, diff) + floor;
    }
  }
  throw std::logic_error("unreachable");
}

Vec LyapunovFunction::gradient(const ParamStore& params, const Vec& x) const {
  return value_and_gradient(params, x).second;
}

std::pair<double, Vec> LyapunovFunction::value_and_gradient(const ParamStore& params,
                                                            const Vec& x) const {
  Tape tape;
  Var in = tape.constant(Mat(x));
  Var v = value(tape, params, in);
  tape.backward(v);
  return {v.scalar(), tape.adjoint(in).col(0)};
}

Var LyapunovFunction::gradient(Tape& tape, const ParamStore& params, Var x) const {
  const Eigen::Index n = dim();
  Var grad;
  for (Eigen::Index i = 0; i < n; ++i) {
    Var e = tape.constant(Mat(Vec::Unit(n, i)));
    Var component = scale(value_dual(tape, params, x, e).tangent, e);
    grad = i == 0 ? component : grad + component;
  }
  return grad;
}

void LyapunovNet::enforce_constraints(ParamStore& params) const {
  if (is_convex()) icnn_.clamp_z_path(params);
}

bool LyapunovNet::constraints_hold(const ParamStore& params) const {
  if (!is_convex()) return true;
  for (auto id : icnn_.z_weights()) {
    if (params.value(id).minCoeff() < 0.0) return false;
  }
  return true;
}

}  // namespace stabledyn
