#include "stabledyn/mlp.hpp"

#include <cmath>

namespace stabledyn {

Mlp::Mlp(ParamStore& params, std::string prefix, std::vector<Eigen::Index> dims, MlpOptions opts)
    : prefix_(std::move(prefix)), dims_(std::move(dims)), opts_(opts) {
  if (dims_.size() < 2) throw DimensionError("Mlp needs at least input and output dims");
  for (auto d : dims_) {
    if (d <= 0) throw DimensionError("Mlp layer dims must be positive");
  }
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    weights_.push_back(params.add(prefix_ + ".W" + std::to_string(l), dims_[l + 1], dims_[l]));
    if (has_bias(l)) {
      biases_.push_back(params.add(prefix_ + ".b" + std::to_string(l), dims_[l + 1], 1));
    } else {
      biases_.push_back(std::nullopt);
    }
  }
}

bool Mlp::has_bias(std::size_t layer) const {
  return layer == 0 ? opts_.first_layer_bias : opts_.hidden_bias;
}

Activation Mlp::layer_activation(std::size_t layer) const {
  return layer + 2 == dims_.size() ? opts_.output : opts_.hidden;
}

void Mlp::initialize(ParamStore& params, std::mt19937_64& rng) const {
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(dims_[l]));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& w : params.value(weights_[l]).reshaped()) w = dist(rng);
    if (biases_[l]) {
      for (auto& b : params.value(*biases_[l]).reshaped()) b = dist(rng);
    }
  }
}

Vec Mlp::forward(const ParamStore& params, const Vec& x) const {
  if (x.size() != in_dim()) {
    throw DimensionError(prefix_ + ": expected input of length " + std::to_string(in_dim()) +
                         ", got " + std::to_string(x.size()));
  }
  Vec h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Vec pre = params.value(weights_[l]) * h;
    if (biases_[l]) pre += params.value(*biases_[l]).col(0);
    const Activation act = layer_activation(l);
    const double d = opts_.smooth_relu_d;
    h = pre.unaryExpr([&](double u) { return activate(act, u, d); });
  }
  return h;
}

Var Mlp::forward(Tape& tape, const ParamStore& params, Var x) const {
  if (x.rows() != in_dim()) {
    throw DimensionError(prefix_ + ": expected input of length " + std::to_string(in_dim()) +
                         ", got " + std::to_string(x.rows()));
  }
  Var h = x;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var pre = matvec(tape.param(params, weights_[l]), h);
    if (biases_[l]) pre = pre + tape.param(params, *biases_[l]);
    const Activation act = layer_activation(l);
    h = act == Activation::Identity ? pre : activation(pre, act, opts_.smooth_relu_d);
  }
  return h;
}

DualVar Mlp::forward_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const {
  if (x.rows() != in_dim() || dx.rows() != in_dim()) {
    throw DimensionError(prefix_ + ": dual input has wrong length");
  }
  Var h = x;
  Var dh = dx;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    Var w = tape.param(params, weights_[l]);
    Var pre = matvec(w, h);
    if (biases_[l]) pre = pre + tape.param(params, *biases_[l]);
    Var dpre = matvec(w, dh);
    const Activation act = layer_activation(l);
    if (act == Activation::Identity) {
      h = pre;
      dh = dpre;
    } else {
      h = activation(pre, act, opts_.smooth_relu_d);
      dh = hadamard(activation_deriv(pre, act, opts_.smooth_relu_d), dpre);
    }
  }
  return {h, dh};
}

}  // namespace stabledyn
