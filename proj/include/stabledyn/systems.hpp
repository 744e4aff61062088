#pragma once

#include "stabledyn/autodiff.hpp"

#include <functional>
#include <random>

namespace stabledyn {

using VectorField = std::function<Vec(const Vec&)>;

// Classical fourth-order Runge-Kutta step.
Vec rk4_step(const VectorField& field, const Vec& x, double h);

// dx = a(x) dt + diag(b(x)) dW with one independent noise channel per
// coordinate.
struct Sde {
  VectorField drift;
  VectorField diffusion;
};

// Weak order-2 stochastic Runge-Kutta step:
//   K1 = h a(x) + (dW - S sqrt(h)) b(x)
//   K2 = h a(x + K1) + (dW + S sqrt(h)) b(x + K1)
//   x' = x + (K1 + K2) / 2
// with dW ~ N(0, h) and S = +-1 drawn per channel.
Vec srk2_step(const Sde& sde, const Vec& x, double h, std::mt19937_64& rng);

// x' = A x + b x w, w ~ N(0, 1) (scalar noise shared by all coordinates).
struct LinearStochasticSystem {
  Mat a;
  double b = 0.0;
  Vec step(const Vec& x, std::mt19937_64& rng) const;
};

// [[0.9, 1], [0, 0.9]]
Mat example_linear_matrix();

// Solves A^T P A + B^T P B - P + Q = 0 through the Kronecker-vectorized
// linear system, then symmetrizes. Throws NumericalError when the system is
// singular or P is not positive definite.
Mat solve_discrete_lyapunov(const Mat& a, const Mat& b, const Mat& q);

double sat(double u);
// x' = y, y' = -y - sin x - 2 sat(x + y)
VectorField saturated_field();
// x^2 + 0.5 y^2 + 1 - cos x
double saturated_reference_v(const Vec& x);

// dx1 = (-x1/sqrt|x| - x1 + x2) dt + sin(x1) dB1
// dx2 = (-x2/sqrt|x| - 10/3 x2 + x1) dt + x2 dB2
Sde sde_system();

VectorField lorenz_field(double sigma = 10.0, double beta = 8.0 / 3.0, double rho = 28.0);

}  // namespace stabledyn
