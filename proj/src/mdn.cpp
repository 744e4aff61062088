#include "stabledyn/mdn.hpp"

#include <cmath>
#include <numbers>

namespace stabledyn {

namespace {

const double kHalfLog2Pi = 0.5 * std::log(2.0 * std::numbers::pi);

double sigmoid(double u) { return 1.0 / (1.0 + std::exp(-u)); }

}  // namespace

double mixture_nll(const Vec& pi, const Mat& mus, const Mat& sigmas, const Vec& x) {
  const Eigen::Index k = pi.size();
  const auto n = static_cast<double>(x.size());
  Vec lp(k);
  for (Eigen::Index i = 0; i < k; ++i) {
    const Vec z = (x - mus.row(i).transpose()).cwiseQuotient(sigmas.row(i).transpose());
    lp(i) = std::log(pi(i)) - 0.5 * z.squaredNorm() - sigmas.row(i).array().log().sum() -
            n * kHalfLog2Pi;
  }
  const double m = lp.maxCoeff();
  return -(m + std::log((lp.array() - m).exp().sum()));
}

MdnHead MdnHead::create(const MdnSpec& spec, std::uint64_t seed) {
  spec.stability.validate();
  if (spec.k < 1) throw std::invalid_argument("MDN needs at least one component");
  ParamStore params;
  MlpOptions mo;
  mo.hidden = spec.activation;

  std::vector<Eigen::Index> trunk_dims{spec.n};
  trunk_dims.insert(trunk_dims.end(), spec.hidden.begin(), spec.hidden.end());
  trunk_dims.push_back(2 * spec.n * spec.k);
  Mlp trunk(params, "trunk", trunk_dims, mo);

  std::vector<Eigen::Index> coeff_dims{spec.n};
  coeff_dims.insert(coeff_dims.end(), spec.hidden.begin(), spec.hidden.end());
  coeff_dims.push_back(spec.k);
  Mlp coeff(params, "coeff", coeff_dims, mo);

  auto lyap = std::make_unique<LyapunovNet>(params, "V", spec.n, spec.lyapunov);

  std::mt19937_64 rng(seed);
  trunk.initialize(params, rng);
  coeff.initialize(params, rng);
  lyap->initialize(params, rng);

  MdnHead head(std::move(params), std::move(trunk), std::move(coeff), std::move(lyap),
               spec.stability, spec.k, spec.sigma_cap);
  head.spec_ = spec;
  return head;
}

MdnHead::MdnHead(ParamStore params, Mlp trunk, Mlp coeff_net,
                 std::unique_ptr<LyapunovFunction> lyapunov, StabilityConfig cfg, int k,
                 double sigma_cap)
    : params_(std::move(params)),
      trunk_(std::move(trunk)),
      coeff_(std::move(coeff_net)),
      lyapunov_(std::move(lyapunov)),
      cfg_(cfg),
      k_(k),
      sigma_cap_(sigma_cap) {
  cfg_.validate();
  if (!lyapunov_) throw std::invalid_argument("MdnHead needs a Lyapunov function");
  const Eigen::Index n = trunk_.in_dim();
  if (k_ < 1) throw std::invalid_argument("MDN needs at least one component");
  if (trunk_.out_dim() != 2 * n * k_) throw DimensionError("MDN trunk must output 2 n k values");
  if (coeff_.in_dim() != n || coeff_.out_dim() != k_) {
    throw DimensionError("MDN coefficient network must map R^n to R^k");
  }
  if (lyapunov_->dim() != n) throw DimensionError("Lyapunov dimension does not match MDN");
  if (!(sigma_cap_ > 0.0)) throw std::invalid_argument("sigma_cap must be positive");
  if (cfg_.mode == StabilityMode::Projection) {
    throw std::invalid_argument("MDN supports none, convex or implicit stabilization");
  }
  if (cfg_.mode == StabilityMode::Convex && !lyapunov_->is_convex()) {
    throw std::invalid_argument(
        "convex scaling requires a convex Lyapunov function (icnn or convex-lnn)");
  }
}

MdnOutput MdnHead::forward(const Vec& x) const {
  const Eigen::Index n = dim();
  if (x.size() != n) {
    throw DimensionError("MDN input has length " + std::to_string(x.size()) + ", expected " +
                         std::to_string(n));
  }
  MdnOutput out;
  const Vec logits = coeff_.forward(params_, x);
  out.pi = (logits.array() - logits.maxCoeff()).exp().matrix();
  out.pi /= out.pi.sum();

  const Vec raw = trunk_.forward(params_, x);
  out.mus.resize(k_, n);
  for (int i = 0; i < k_; ++i) out.mus.row(i) = raw.segment(i * n, n).transpose();
  Vec mean = out.mus.transpose() * out.pi;

  if (stabilized()) {
    const double target = cfg_.beta * v(x);
    const double vm = v(mean);
    if (vm > target && vm >= kOriginGuard) {
      out.scaling.intervened = true;
      if (cfg_.mode == StabilityMode::Convex) {
        out.scaling.gamma = convex_gamma(vm, target);
      } else if (target > 0.0) {
        out.scaling.root = solve_gamma(*lyapunov_, params_, mean, target, cfg_);
        out.scaling.gamma = out.scaling.root->gamma_star;
      } else {
        out.scaling.gamma = 0.0;
      }
      out.mus *= out.scaling.gamma;
      mean *= out.scaling.gamma;
    }
  }
  out.mixture_mean = mean;

  out.sigmas.resize(k_, n);
  const double sd_scale = stabilized() ? std::sqrt(sigma_cap_ * v(mean)) : 0.0;
  for (int i = 0; i < k_; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      const double r = raw(n * k_ + i * n + j);
      out.sigmas(i, j) = stabilized() ? sigmoid(r) * sd_scale : std::exp(r);
    }
  }
  out.max_var = out.sigmas.cwiseAbs2().maxCoeff();
  return out;
}

TapedMdnOutput MdnHead::record_forward(Tape& tape, const Vec& x) const {
  const Eigen::Index n = dim();
  if (x.size() != n) throw DimensionError("MDN input has wrong length");
  TapedMdnOutput out;
  Var xv = tape.constant(Mat(x));

  Var logits = coeff_.forward(tape, params_, xv);
  out.log_pi = logits - scale(logsumexp(logits), tape.constant(Mat::Ones(k_, 1)));
  Var pi = exp(out.log_pi);

  Var raw = trunk_.forward(tape, params_, xv);
  Var mean;
  for (int i = 0; i < k_; ++i) {
    out.mus.push_back(slice(raw, i * n, n));
    Var term = scale(slice(pi, i, 1), out.mus.back());
    mean = i == 0 ? term : mean + term;
  }

  if (stabilized()) {
    Var target = scale(tape.constant(cfg_.beta), lyapunov_->value(tape, params_, xv));
    Var gamma = record_scaling(tape, *lyapunov_, params_, mean, target, cfg_, &out.scaling);
    if (out.scaling.intervened) {
      for (auto& mu : out.mus) mu = scale(gamma, mu);
      mean = scale(gamma, mean);
    }
  }
  out.mixture_mean = mean;

  Var ones = tape.constant(Mat::Ones(n, 1));
  Var half_log_scale;
  if (stabilized()) {
    Var vm = lyapunov_->value(tape, params_, mean);
    half_log_scale = scale(tape.constant(0.5), log(scale(tape.constant(sigma_cap_), vm)));
  }
  for (int i = 0; i < k_; ++i) {
    Var r = slice(raw, n * k_ + i * n, n);
    if (stabilized()) {
      out.log_sigmas.push_back(log(activation(r, Activation::Sigmoid)) + scale(half_log_scale, ones));
    } else {
      out.log_sigmas.push_back(r);
    }
  }
  return out;
}

double MdnHead::nll(const Vec& x, const Vec& x_next) const {
  if (x_next.size() != dim()) throw DimensionError("MDN target has wrong length");
  const MdnOutput out = forward(x);
  const double v = mixture_nll(out.pi, out.mus, out.sigmas, x_next);
  if (!std::isfinite(v)) throw NumericalError("MDN negative log-likelihood is not finite");
  return v;
}

Var MdnHead::record_nll(Tape& tape, const Vec& x, const Vec& x_next) const {
  const Eigen::Index n = dim();
  if (x_next.size() != n) throw DimensionError("MDN target has wrong length");
  TapedMdnOutput out = record_forward(tape, x);
  Var target = tape.constant(Mat(x_next));
  Var minus_half = tape.constant(-0.5);
  Var norm_const = tape.constant(static_cast<double>(n) * kHalfLog2Pi);

  Var lps;
  for (int i = 0; i < k_; ++i) {
    Var z = divide(target - out.mus[static_cast<std::size_t>(i)],
                   exp(out.log_sigmas[static_cast<std::size_t>(i)]));
    Var lp = slice(out.log_pi, i, 1) + scale(minus_half, dot(z, z)) -
             sum(out.log_sigmas[static_cast<std::size_t>(i)]) - norm_const;
    Var placed = scale(lp, tape.constant(Mat(Vec::Unit(k_, i))));
    lps = i == 0 ? placed : lps + placed;
  }
  Var result = -logsumexp(lps);
  if (!std::isfinite(result.scalar())) {
    throw NumericalError("MDN negative log-likelihood is not finite");
  }
  return result;
}

Vec MdnHead::sample(const Vec& x, std::mt19937_64& rng) const {
  const MdnOutput out = forward(x);
  std::discrete_distribution<int> pick(out.pi.data(), out.pi.data() + out.pi.size());
  const int i = pick(rng);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vec s(dim());
  for (Eigen::Index j = 0; j < dim(); ++j) s(j) = out.mus(i, j) + out.sigmas(i, j) * normal(rng);
  return s;
}

StochasticRollout MdnHead::rollout(const Vec& x0, int steps, std::mt19937_64& rng) const {
  if (steps < 0) throw std::invalid_argument("rollout: steps must be nonnegative");
  StochasticRollout r;
  r.states.states.push_back(x0);
  r.states.v_values.push_back(v(x0));
  r.means.states.push_back(x0);
  r.means.v_values.push_back(v(x0));
  for (int t = 0; t < steps; ++t) {
    r.states.states.push_back(sample(r.states.states.back(), rng));
    r.states.v_values.push_back(v(r.states.states.back()));
    r.means.states.push_back(forward(r.means.states.back()).mixture_mean);
    r.means.v_values.push_back(v(r.means.states.back()));
  }
  return r;
}

}  // namespace stabledyn
