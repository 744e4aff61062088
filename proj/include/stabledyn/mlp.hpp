#pragma once

#include "stabledyn/autodiff.hpp"

#include <random>
#include <string>
#include <vector>

namespace stabledyn {

// Value and forward-mode tangent recorded side by side, so a directional
// derivative stays differentiable with respect to the parameters.
struct DualVar {
  Var value;
  Var tangent;
};

struct MlpOptions {
  Activation hidden = Activation::ReLU;
  Activation output = Activation::Identity;
  double smooth_relu_d = 0.1;
  bool first_layer_bias = true;
  bool hidden_bias = true;
};

// Fully connected feed-forward network, e.g. dims {n, 25, 25, l}.
// Parameters live in an external ParamStore under "<prefix>.W<i>" / "<prefix>.b<i>".
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParamStore& params, std::string prefix, std::vector<Eigen::Index> dims, MlpOptions opts = {});

  // Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
  void initialize(ParamStore& params, std::mt19937_64& rng) const;

  Vec forward(const ParamStore& params, const Vec& x) const;
  Var forward(Tape& tape, const ParamStore& params, Var x) const;
  DualVar forward_dual(Tape& tape, const ParamStore& params, Var x, Var dx) const;

  Eigen::Index in_dim() const { return dims_.front(); }
  Eigen::Index out_dim() const { return dims_.back(); }
  const std::vector<Eigen::Index>& dims() const { return dims_; }
  const MlpOptions& options() const { return opts_; }
  const std::string& prefix() const { return prefix_; }
  const std::vector<ParamId>& weights() const { return weights_; }

 private:
  bool has_bias(std::size_t layer) const;
  Activation layer_activation(std::size_t layer) const;

  std::string prefix_;
  std::vector<Eigen::Index> dims_;
  MlpOptions opts_;
  std::vector<ParamId> weights_;
  std::vector<std::optional<ParamId>> biases_;
};

}  // namespace stabledyn
