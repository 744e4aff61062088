#include "stabledyn/autodiff.hpp"

#include <cmath>
#include <sstream>

namespace stabledyn {

ParamId ParamStore::add(std::string name, Eigen::Index rows, Eigen::Index cols) {
  if (find(name)) {
    throw std::invalid_argument("duplicate parameter name: " + name);
  }
  entries_.push_back({std::move(name), Mat::Zero(rows, cols), Mat::Zero(rows, cols)});
  return ParamId{entries_.size() - 1};
}

std::optional<ParamId> ParamStore::find(std::string_view name) const {
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].name == name) return ParamId{i};
  }
  return std::nullopt;
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += static_cast<std::size_t>(e.values.size());
  return n;
}

void ParamStore::zero_grads() {
  for (auto& e : entries_) e.grads.setZero();
}

Vec ParamStore::flat_values() const {
  Vec out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index k = 0;
  for (const auto& e : entries_) {
    out.segment(k, e.values.size()) = e.values.reshaped();
    k += e.values.size();
  }
  return out;
}

Vec ParamStore::flat_grads() const {
  Vec out(static_cast<Eigen::Index>(scalar_count()));
  Eigen::Index k = 0;
  for (const auto& e : entries_) {
    out.segment(k, e.grads.size()) = e.grads.reshaped();
    k += e.grads.size();
  }
  return out;
}

void ParamStore::set_flat_values(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(scalar_count())) {
    throw DimensionError("flat parameter vector has wrong length");
  }
  Eigen::Index k = 0;
  for (auto& e : entries_) {
    e.values.reshaped() = flat.segment(k, e.values.size());
    k += e.values.size();
  }
}

void ParamStore::set_flat_grads(const Vec& flat) {
  if (flat.size() != static_cast<Eigen::Index>(scalar_count())) {
    throw DimensionError("flat gradient vector has wrong length");
  }
  Eigen::Index k = 0;
  for (auto& e : entries_) {
    e.grads.reshaped() = flat.segment(k, e.grads.size());
    k += e.grads.size();
  }
}

std::string ParamStore::describe_flat_index(std::size_t flat) const {
  std::size_t k = 0;
  for (const auto& e : entries_) {
    const auto n = static_cast<std::size_t>(e.values.size());
    if (flat < k + n) {
      const auto local = static_cast<Eigen::Index>(flat - k);
      std::ostringstream os;
      os << e.name << "[" << local % e.values.rows() << "," << local / e.values.rows() << "]";
      return os.str();
    }
    k += n;
  }
  return "<out of range>";
}

double smooth_relu(double u, double d) {
  if (u <= 0.0) return 0.0;
  if (u < d) return u * u / (2.0 * d);
  return u - 0.5 * d;
}

double activate(Activation act, double u, double d) {
  switch (act) {
    case Activation::Identity: return u;
    case Activation::ReLU: return u > 0.0 ? u : 0.0;
    case Activation::SmoothReLU: return smooth_relu(u, d);
    case Activation::Tanh: return std::tanh(u);
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-u));
  }
  return u;
}

double activate_deriv(Activation act, double u, double d) {
  switch (act) {
    case Activation::Identity: return 1.0;
    case Activation::ReLU: return u > 0.0 ? 1.0 : 0.0;
    case Activation::SmoothReLU:
      if (u <= 0.0) return 0.0;
      if (u < d) return u / d;
      return 1.0;
    case Activation::Tanh: {
      const double t = std::tanh(u);
      return 1.0 - t * t;
    }
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-u));
      return s * (1.0 - s);
    }
  }
  return 1.0;
}

double activate_second_deriv(Activation act, double u, double d) {
  switch (act) {
    case Activation::Identity:
    case Activation::ReLU: return 0.0;
    case Activation::SmoothReLU: return (u > 0.0 && u < d) ? 1.0 / d : 0.0;
    case Activation::Tanh: {
      const double t = std::tanh(u);
      return -2.0 * t * (1.0 - t * t);
    }
    case Activation::Sigmoid: {
      const double s = 1.0 / (1.0 + std::exp(-u));
      return s * (1.0 - s) * (1.0 - 2.0 * s);
    }
  }
  return 0.0;
}

const Mat& Var::value() const {
  if (!tape_) throw std::logic_error("use of an unbound Var");
  return tape_->value_of(id_);
}

double Var::scalar() const {
  const Mat& v = value();
  if (v.size() != 1) throw DimensionError("Var is not a scalar");
  return v(0, 0);
}

Vec Var::vec() const {
  const Mat& v = value();
  if (v.cols() != 1) throw DimensionError("Var is not a column vector");
  return v.col(0);
}

Var Tape::constant(Mat value) { return record(Op::Leaf, std::move(value), -1); }

Var Tape::constant(double value) { return record(Op::Leaf, Mat::Constant(1, 1, value), -1); }

Var Tape::param(const ParamStore& params, ParamId id) {
  Var v = record(Op::Param, params.value(id), -1);
  nodes_.back().param = id.index;
  return v;
}

Var Tape::record(Op op, Mat value, int a, int b) {
  if (swept_) throw std::logic_error("tape already swept; record a new tape");
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.a = a;
  n.b = b;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::record_act(Op op, Mat value, int a, Activation act, double d) {
  Var v = record(op, std::move(value), a);
  nodes_.back().act = act;
  nodes_.back().d = d;
  return v;
}

Var Tape::record_slice(Mat value, int a, Eigen::Index start) {
  Var v = record(Op::Slice, std::move(value), a);
  nodes_.back().start = start;
  return v;
}

const Mat& Tape::adjoint(Var v) const {
  if (!swept_) throw std::logic_error("adjoint requested before backward");
  return adjoints_.at(static_cast<std::size_t>(v.id()));
}

void Tape::backward(Var root, ParamStore& params) {
  if (root.tape() != this) throw std::invalid_argument("root belongs to a different tape");
  run_reverse(root.id(), &params);
}

void Tape::backward(Var root) {
  if (root.tape() != this) throw std::invalid_argument("root belongs to a different tape");
  run_reverse(root.id(), nullptr);
}

void Tape::run_reverse(int root, ParamStore* params) {
  if (swept_) throw std::logic_error("tape already swept");
  if (nodes_.at(static_cast<std::size_t>(root)).value.size() != 1) {
    throw DimensionError("backward requires a scalar root");
  }
  swept_ = true;
  adjoints_.resize(nodes_.size());
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    adjoints_[i] = Mat::Zero(nodes_[i].value.rows(), nodes_[i].value.cols());
  }
  adjoints_[static_cast<std::size_t>(root)](0, 0) = 1.0;

  for (int i = root; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    const Mat& g = adjoints_[static_cast<std::size_t>(i)];
    if (n.op == Op::Leaf) continue;
    if (n.op == Op::Param) {
      if (params) params->grad(ParamId{n.param}) += g;
      continue;
    }
    if (g.isZero(0.0)) continue;
    const auto ia = static_cast<std::size_t>(n.a);
    const auto ib = static_cast<std::size_t>(n.b);
    const Mat& av = nodes_[ia].value;
    switch (n.op) {
      case Op::Add:
        adjoints_[ia] += g;
        adjoints_[ib] += g;
        break;
      case Op::Sub:
        adjoints_[ia] += g;
        adjoints_[ib] -= g;
        break;
      case Op::Neg: adjoints_[ia] -= g; break;
      case Op::Mul: {
        const Mat& bv = nodes_[ib].value;
        adjoints_[ia] += g.cwiseProduct(bv);
        adjoints_[ib] += g.cwiseProduct(av);
        break;
      }
      case Op::Div: {
        const Mat& bv = nodes_[ib].value;
        adjoints_[ia] += g.cwiseQuotient(bv);
        adjoints_[ib] -= g.cwiseProduct(av).cwiseQuotient(bv.cwiseProduct(bv));
        break;
      }
      case Op::Scale: {
        const Mat& vv = nodes_[ib].value;
        adjoints_[ia](0, 0) += g.cwiseProduct(vv).sum();
        adjoints_[ib] += av(0, 0) * g;
        break;
      }
      case Op::MatVec: {
        const Mat& xv = nodes_[ib].value;
        adjoints_[ia] += g * xv.transpose();
        adjoints_[ib] += av.transpose() * g;
        break;
      }
      case Op::Dot: {
        const Mat& bv = nodes_[ib].value;
        adjoints_[ia] += g(0, 0) * bv;
        adjoints_[ib] += g(0, 0) * av;
        break;
      }
      case Op::Sum: adjoints_[ia].array() += g(0, 0); break;
      case Op::Act:
        adjoints_[ia] += g.cwiseProduct(
            av.unaryExpr([&](double u) { return activate_deriv(n.act, u, n.d); }));
        break;
      case Op::ActDeriv:
        adjoints_[ia] += g.cwiseProduct(
            av.unaryExpr([&](double u) { return activate_second_deriv(n.act, u, n.d); }));
        break;
      case Op::Exp: adjoints_[ia] += g.cwiseProduct(n.value); break;
      case Op::Log: adjoints_[ia] += g.cwiseQuotient(av); break;
      case Op::Slice: adjoints_[ia].block(n.start, 0, g.rows(), g.cols()) += g; break;
      case Op::Softmax: {
        const Mat& p = n.value;
        const double inner = g.cwiseProduct(p).sum();
        adjoints_[ia] += p.cwiseProduct((g.array() - inner).matrix());
        break;
      }
      case Op::LogSumExp: {
        const double m = av.maxCoeff();
        Mat p = (av.array() - m).exp().matrix();
        p /= p.sum();
        adjoints_[ia] += g(0, 0) * p;
        break;
      }
      case Op::Leaf:
      case Op::Param: break;
    }
  }
}

namespace {

Tape& common_tape(Var a, Var b) {
  if (!a.valid() || a.tape() != b.tape()) throw std::invalid_argument("operands on different tapes");
  return *a.tape();
}

void require_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string("shape mismatch in ") + what);
  }
}

}  // namespace

Var operator+(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "add");
  return t.record(Tape::Op::Add, a.value() + b.value(), a.id(), b.id());
}

Var operator-(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "sub");
  return t.record(Tape::Op::Sub, a.value() - b.value(), a.id(), b.id());
}

Var operator-(Var a) { return a.tape()->record(Tape::Op::Neg, -a.value(), a.id()); }

Var hadamard(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "hadamard");
  return t.record(Tape::Op::Mul, a.value().cwiseProduct(b.value()), a.id(), b.id());
}

Var divide(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "divide");
  return t.record(Tape::Op::Div, a.value().cwiseQuotient(b.value()), a.id(), b.id());
}

Var scale(Var s, Var v) {
  Tape& t = common_tape(s, v);
  if (s.value().size() != 1) throw DimensionError("scale factor must be 1x1");
  return t.record(Tape::Op::Scale, s.value()(0, 0) * v.value(), s.id(), v.id());
}

Var matvec(Var m, Var x) {
  Tape& t = common_tape(m, x);
  if (m.value().cols() != x.value().rows() || x.value().cols() != 1) {
    throw DimensionError("matvec: matrix has " + std::to_string(m.value().cols()) +
                         " columns, vector has " + std::to_string(x.value().rows()) + " rows");
  }
  return t.record(Tape::Op::MatVec, m.value() * x.value(), m.id(), x.id());
}

Var dot(Var a, Var b) {
  Tape& t = common_tape(a, b);
  require_same_shape(a.value(), b.value(), "dot");
  return t.record(Tape::Op::Dot, Mat::Constant(1, 1, a.value().cwiseProduct(b.value()).sum()),
                  a.id(), b.id());
}

Var sum(Var v) {
  return v.tape()->record(Tape::Op::Sum, Mat::Constant(1, 1, v.value().sum()), v.id());
}

Var activation(Var v, Activation act, double d) {
  Mat out = v.value().unaryExpr([&](double u) { return activate(act, u, d); });
  return v.tape()->record_act(Tape::Op::Act, std::move(out), v.id(), act, d);
}

Var activation_deriv(Var v, Activation act, double d) {
  Mat out = v.value().unaryExpr([&](double u) { return activate_deriv(act, u, d); });
  return v.tape()->record_act(Tape::Op::ActDeriv, std::move(out), v.id(), act, d);
}

Var exp(Var v) { return v.tape()->record(Tape::Op::Exp, v.value().array().exp().matrix(), v.id()); }

Var log(Var v) { return v.tape()->record(Tape::Op::Log, v.value().array().log().matrix(), v.id()); }

Var slice(Var v, Eigen::Index start, Eigen::Index length) {
  if (v.value().cols() != 1 || start < 0 || start + length > v.value().rows()) {
    throw DimensionError("slice out of range");
  }
  return v.tape()->record_slice(v.value().block(start, 0, length, 1), v.id(), start);
}

Var softmax(Var v) {
  const Mat& a = v.value();
  Mat p = (a.array() - a.maxCoeff()).exp().matrix();
  p /= p.sum();
  return v.tape()->record(Tape::Op::Softmax, std::move(p), v.id());
}

Var logsumexp(Var v) {
  const Mat& a = v.value();
  const double m = a.maxCoeff();
  const double lse = m + std::log((a.array() - m).exp().sum());
  return v.tape()->record(Tape::Op::LogSumExp, Mat::Constant(1, 1, lse), v.id());
}

GradCheckReport grad_check(const TapedLoss& loss, ParamStore& params, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("grad_check: h must be positive");

  const Vec saved_grads = params.flat_grads();
  params.zero_grads();
  Vec analytic;
  {
    Tape tape;
    Var root = loss(tape, params);
    if (!std::isfinite(root.scalar())) throw NumericalError("grad_check: non-finite loss");
    tape.backward(root, params);
    analytic = params.flat_grads();
  }
  params.set_flat_grads(saved_grads);

  auto eval = [&]() {
    Tape tape;
    const double v = loss(tape, params).scalar();
    if (!std::isfinite(v)) throw NumericalError("grad_check: non-finite loss");
    return v;
  };

  const Vec base = params.flat_values();
  Vec probe = base;
  GradCheckReport report;
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    probe(i) = base(i) + h;
    params.set_flat_values(probe);
    const double up = eval();
    probe(i) = base(i) - h;
    params.set_flat_values(probe);
    const double down = eval();
    probe(i) = base(i);

    const double numeric = (up - down) / (2.0 * h);
    const double err = std::abs(analytic(i) - numeric) / std::max(1.0, std::abs(numeric));
    if (err > report.max_rel_err || i == 0) {
      report.max_rel_err = std::max(report.max_rel_err, err);
      report.worst_index = static_cast<std::size_t>(i);
      report.analytic = analytic(i);
      report.numeric = numeric;
    }
  }
  params.set_flat_values(base);
  report.worst_name = params.describe_flat_index(report.worst_index);
  return report;
}

}  // namespace stabledyn
