#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace stabledyn {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ParamId {
  std::size_t index = 0;
  friend bool operator==(ParamId, ParamId) = default;
};

// Named real arrays with a gradient slot of the same shape. This is the unit
// that the optimizer updates and the model file serializes.
class ParamStore {
 public:
  ParamId add(std::string name, Eigen::Index rows, Eigen::Index cols);

  std::optional<ParamId> find(std::string_view name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t scalar_count() const;

  const std::string& name(ParamId id) const { return entries_.at(id.index).name; }
  Mat& value(ParamId id) { return entries_.at(id.index).values; }
  const Mat& value(ParamId id) const { return entries_.at(id.index).values; }
  Mat& grad(ParamId id) { return entries_.at(id.index).grads; }
  const Mat& grad(ParamId id) const { return entries_.at(id.index).grads; }

  void zero_grads();

  // Column-major concatenation of every entry, in insertion order.
  Vec flat_values() const;
  Vec flat_grads() const;
  void set_flat_values(const Vec& flat);
  void set_flat_grads(const Vec& flat);

  // Maps a flat index back to "name[row,col]" for diagnostics.
  std::string describe_flat_index(std::size_t flat) const;

 private:
  struct Entry {
    std::string name;
    Mat values;
    Mat grads;
  };
  std::vector<Entry> entries_;
};

enum class Activation { Identity, ReLU, SmoothReLU, Tanh, Sigmoid };

// Zero below 0, quadratic on (0, d), linear with slope 1 above d. C^1.
double smooth_relu(double u, double d);

double activate(Activation act, double u, double d);
double activate_deriv(Activation act, double u, double d);
double activate_second_deriv(Activation act, double u, double d);

class Tape;

// Handle to a node recorded on a Tape. Values are column vectors, 1x1 for
// scalars, or matrices for parameter leaves.
class Var {
 public:
  Var() = default;

  const Mat& value() const;
  double scalar() const;
  Vec vec() const;
  Eigen::Index rows() const { return value().rows(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Per-evaluation record of primitive operations. Build one, run one reverse
// sweep, discard it.
class Tape {
 public:
  enum class Op {
    Leaf,
    Param,
    Add,
    Sub,
    Neg,
    Mul,
    Div,
    Scale,
    MatVec,
    Dot,
    Sum,
    Act,
    ActDeriv,
    Exp,
    Log,
    Slice,
    Softmax,
    LogSumExp,
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Mat value);
  Var constant(double value);
  Var param(const ParamStore& params, ParamId id);

  // Reverse sweep from a 1x1 root. Parameter gradients are added into
  // params.grads; adjoints of every node (including inputs) stay readable.
  void backward(Var root, ParamStore& params);
  void backward(Var root);

  const Mat& adjoint(Var v) const;
  std::size_t size() const { return nodes_.size(); }

  // Recording entry point used by the op free functions.
  Var record(Op op, Mat value, int a, int b = -1);
  Var record_act(Op op, Mat value, int a, Activation act, double d);
  Var record_slice(Mat value, int a, Eigen::Index start);

  const Mat& value_of(int id) const { return nodes_.at(static_cast<std::size_t>(id)).value; }

 private:
  struct Node {
    Op op = Op::Leaf;
    Mat value;
    int a = -1;
    int b = -1;
    Activation act = Activation::Identity;
    double d = 0.0;
    Eigen::Index start = 0;
    std::size_t param = 0;
  };
  void run_reverse(int root, ParamStore* params);

  std::vector<Node> nodes_;
  std::vector<Mat> adjoints_;
  bool swept_ = false;
};

Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator-(Var a);
// Elementwise product and quotient of equal-shaped nodes.
Var hadamard(Var a, Var b);
Var divide(Var a, Var b);
// s must be 1x1.
Var scale(Var s, Var v);
Var matvec(Var m, Var x);
Var dot(Var a, Var b);
Var sum(Var v);
Var activation(Var v, Activation act, double d = 0.0);
Var activation_deriv(Var v, Activation act, double d = 0.0);
Var exp(Var v);
Var log(Var v);
Var slice(Var v, Eigen::Index start, Eigen::Index length);
Var softmax(Var v);
Var logsumexp(Var v);

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::string worst_name;
  double analytic = 0.0;
  double numeric = 0.0;
};

using TapedLoss = std::function<Var(Tape&, const ParamStore&)>;

// Central-difference check of every parameter scalar.
// Relative error is |analytic - numeric| / max(1, |numeric|).
GradCheckReport grad_check(const TapedLoss& loss, ParamStore& params, double h = 1e-5);

}  // namespace stabledyn
