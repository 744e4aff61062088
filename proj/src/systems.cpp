#include "stabledyn/systems.hpp"

#include <cmath>

namespace stabledyn {

Vec rk4_step(const VectorField& field, const Vec& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("rk4_step: h must be positive");
  const Vec k1 = field(x);
  const Vec k2 = field(x + 0.5 * h * k1);
  const Vec k3 = field(x + 0.5 * h * k2);
  const Vec k4 = field(x + h * k3);
  return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

Vec srk2_step(const Sde& sde, const Vec& x, double h, std::mt19937_64& rng) {
  if (!(h > 0.0)) throw std::invalid_argument("srk2_step: h must be positive");
  const Eigen::Index n = x.size();
  const double sqrt_h = std::sqrt(h);
  std::normal_distribution<double> normal(0.0, sqrt_h);
  std::bernoulli_distribution coin(0.5);
  Vec dw(n);
  Vec s(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    dw(i) = normal(rng);
    s(i) = coin(rng) ? 1.0 : -1.0;
  }
  const Vec k1 = h * sde.drift(x) + (dw - s * sqrt_h).cwiseProduct(sde.diffusion(x));
  const Vec x1 = x + k1;
  const Vec k2 = h * sde.drift(x1) + (dw + s * sqrt_h).cwiseProduct(sde.diffusion(x1));
  return x + 0.5 * (k1 + k2);
}

Vec LinearStochasticSystem::step(const Vec& x, std::mt19937_64& rng) const {
  if (b == 0.0) return a * x;
  std::normal_distribution<double> normal(0.0, 1.0);
  return a * x + b * normal(rng) * x;
}

Mat example_linear_matrix() {
  Mat a(2, 2);
  a << 0.9, 1.0, 0.0, 0.9;
  return a;
}

Mat solve_discrete_lyapunov(const Mat& a, const Mat& b, const Mat& q) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || b.cols() != n || q.rows() != n || q.cols() != n) {
    throw DimensionError("solve_discrete_lyapunov: A, B, Q must be square and equal-sized");
  }
  // vec(X P Y) = (Y^T kron X) vec(P)
  const Eigen::Index n2 = n * n;
  Mat op = Mat::Identity(n2, n2);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      op.block(i * n, j * n, n, n) -= a(j, i) * a.transpose() + b(j, i) * b.transpose();
    }
  }
  Eigen::FullPivLU<Mat> lu(op);
  if (!lu.isInvertible()) {
    throw NumericalError("discrete Lyapunov operator is singular");
  }
  const Vec vec_q = q.reshaped();
  Mat p = lu.solve(vec_q).reshaped(n, n);
  p = (0.5 * (p + p.transpose())).eval();
  Eigen::LLT<Mat> llt(p);
  if (llt.info() != Eigen::Success) {
    throw NumericalError("Lyapunov solution is not positive definite; system is not 2nd-mean stable");
  }
  return p;
}

double sat(double u) {
  if (u > -1.0 && u < 1.0) return u;
  return u > 0.0 ? 1.0 : -1.0;
}

VectorField saturated_field() {
  return [](const Vec& s) {
    Vec out(2);
    out(0) = s(1);
    out(1) = -s(1) - std::sin(s(0)) - 2.0 * sat(s(0) + s(1));
    return out;
  };
}

double saturated_reference_v(const Vec& s) {
  return s(0) * s(0) + 0.5 * s(1) * s(1) + 1.0 - std::cos(s(0));
}

Sde sde_system() {
  Sde sde;
  sde.drift = [](const Vec& s) {
    const double r = s.norm();
    const double inv = r < 1e-12 ? 0.0 : 1.0 / std::sqrt(r);
    Vec out(2);
    out(0) = -s(0) * inv - s(0) + s(1);
    out(1) = -s(1) * inv - (10.0 / 3.0) * s(1) + s(0);
    return out;
  };
  sde.diffusion = [](const Vec& s) {
    Vec out(2);
    out(0) = std::sin(s(0));
    out(1) = s(1);
    return out;
  };
  return sde;
}

VectorField lorenz_field(double sigma, double beta, double rho) {
  return [=](const Vec& s) {
    Vec out(3);
    out(0) = sigma * (s(1) - s(0));
    out(1) = s(0) * (rho - s(2)) - s(1);
    out(2) = s(0) * s(1) - beta * s(2);
    return out;
  };
}

}  // namespace stabledyn
