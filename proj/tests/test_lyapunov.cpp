#include "helpers.hpp"

#include <doctest.h>

using namespace stabledyn;
using testutil::uniform_vec;
using testutil::vec2;

namespace {

const LyapunovVariant kVariants[] = {LyapunovVariant::ICNN, LyapunovVariant::LNN, LyapunovVariant::ConvexLNN};

struct Draw {
  ParamStore ps;
  LyapunovNet v;
};

Draw make_net(LyapunovVariant variant, std::uint64_t seed, Eigen::Index n = 2, double weight_scale = 1.0) {
  Draw d;
  LyapunovOptions opts;
  opts.variant = variant;
  d.v = LyapunovNet(d.ps, "V", n, opts);
  std::mt19937_64 rng(seed);
  d.v.initialize(d.ps, rng);
  if (weight_scale != 1.0) {
    d.ps.set_flat_values(d.ps.flat_values() * weight_scale);
    d.v.enforce_constraints(d.ps);
  }
  return d;
}

}  // namespace

TEST_CASE("V vanishes at the origin and respects the quadratic floor") {
  std::mt19937_64 rng(1);
  for (LyapunovVariant variant : kVariants) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Draw d = make_net(variant, seed, 2, 3.0);
      CHECK(d.v.value(d.ps, Vec::Zero(2)) == 0.0);
      CHECK(d.v.value(d.ps, vec2(1, 0)) >= 0.001);
      for (int i = 0; i < 1000; ++i) {
        const Vec x = uniform_vec(rng, 2, -10, 10);
        const double vx = d.v.value(d.ps, x);
        CHECK(vx > 0.0);
        CHECK(vx - 0.001 * x.squaredNorm() >= -1e-12);
      }
    }
  }
}

TEST_CASE("convex variants satisfy midpoint convexity") {
  std::mt19937_64 rng(2);
  for (LyapunovVariant variant : {LyapunovVariant::ICNN, LyapunovVariant::ConvexLNN}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Draw d = make_net(variant, seed, 2, 3.0);
      CHECK(d.v.is_convex());
      int violations = 0;
      for (int i = 0; i < 1000; ++i) {
        const Vec a = uniform_vec(rng, 2, -6, 6);
        const Vec b = uniform_vec(rng, 2, -6, 6);
        const double mid = d.v.value(d.ps, 0.5 * (a + b));
        if (mid > 0.5 * (d.v.value(d.ps, a) + d.v.value(d.ps, b)) + 1e-12) ++violations;
      }
      CHECK(violations == 0);
    }
  }
  Draw lnn = make_net(LyapunovVariant::LNN, 0);
  CHECK_FALSE(lnn.v.is_convex());
}

TEST_CASE("radial growth along rays for convex variants") {
  std::mt19937_64 rng(3);
  for (LyapunovVariant variant : {LyapunovVariant::ICNN, LyapunovVariant::ConvexLNN}) {
    Draw d = make_net(variant, 7, 2, 3.0);
    for (int i = 0; i < 200; ++i) {
      Vec u = uniform_vec(rng, 2, -1, 1);
      u.normalize();
      double prev = 0.0;
      for (double t : {1.0, 2.0, 4.0, 8.0, 16.0}) {
        const double vt = d.v.value(d.ps, t * u);
        CHECK(vt >= prev);
        prev = vt;
      }
    }
  }
}

TEST_CASE("LNN radial growth is only logged") {
  std::mt19937_64 rng(4);
  Draw d = make_net(LyapunovVariant::LNN, 7, 2, 3.0);
  int failures = 0;
  for (int i = 0; i < 200; ++i) {
    Vec u = uniform_vec(rng, 2, -1, 1).normalized();
    double prev = 0.0;
    for (double t : {1.0, 2.0, 4.0, 8.0, 16.0}) {
      const double vt = d.v.value(d.ps, t * u);
      if (vt < prev) ++failures;
      prev = vt;
    }
  }
  MESSAGE("LNN rays with non-monotone samples: " << failures << " of 1000 checks");
}

TEST_CASE("input gradient: floor-only example, origin and finite differences") {
  // Zero body leaves only the floor term, so grad V = 2 eps x.
  for (LyapunovVariant variant : kVariants) {
    Draw d = make_net(variant, 0);
    d.ps.set_flat_values(Vec::Zero(static_cast<Eigen::Index>(d.ps.scalar_count())));
    const Vec g = d.v.gradient(d.ps, vec2(1, 2));
    CHECK(g(0) == doctest::Approx(0.002).epsilon(1e-12));
    CHECK(g(1) == doctest::Approx(0.004).epsilon(1e-12));
  }
  Draw lnn = make_net(LyapunovVariant::LNN, 1);
  CHECK(lnn.v.gradient(lnn.ps, Vec::Zero(2)).norm() == 0.0);

  std::mt19937_64 rng(5);
  const double h = 1e-6;
  for (LyapunovVariant variant : kVariants) {
    Draw d = make_net(variant, 3, 2, 2.0);
    for (int i = 0; i < 100; ++i) {
      const Vec x = uniform_vec(rng, 2, -6, 6);
      const Vec g = d.v.gradient(d.ps, x);
      Vec fd(2);
      for (int j = 0; j < 2; ++j) {
        Vec e = Vec::Zero(2);
        e(j) = h;
        fd(j) = (d.v.value(d.ps, x + e) - d.v.value(d.ps, x - e)) / (2 * h);
      }
      CHECK(testutil::max_rel_err(g, fd) < 1e-4);
    }
  }
}

TEST_CASE("taped value, dual tangent and taped gradient agree with the plain paths") {
  std::mt19937_64 rng(6);
  for (LyapunovVariant variant : kVariants) {
    Draw d = make_net(variant, 4, 3, 2.0);
    for (int i = 0; i < 20; ++i) {
      const Vec x = uniform_vec(rng, 3, -4, 4);
      const Vec dx = uniform_vec(rng, 3, -1, 1);
      Tape tape;
      Var xv = tape.constant(Mat(x));
      CHECK(d.v.value(tape, d.ps, xv).scalar() == doctest::Approx(d.v.value(d.ps, x)).epsilon(1e-13));
      DualVar dual = d.v.value_dual(tape, d.ps, xv, tape.constant(Mat(dx)));
      const Vec g = d.v.gradient(d.ps, x);
      CHECK(dual.tangent.scalar() == doctest::Approx(g.dot(dx)).epsilon(1e-10));
      CHECK((d.v.gradient(tape, d.ps, xv).vec() - g).norm() < 1e-10 * std::max(1.0, g.norm()));
    }
  }
}

TEST_CASE("parameter gradients of V and of its input gradient pass finite-difference checks") {
  std::mt19937_64 rng(7);
  for (LyapunovVariant variant : kVariants) {
    Draw d = make_net(variant, 8, 2, 2.0);
    const Vec x = uniform_vec(rng, 2, -3, 3);
    const Vec w = uniform_vec(rng, 2, -1, 1);
    const GradCheckReport rv = grad_check(
        [&](Tape& t, const ParamStore& p) { return d.v.value(t, p, t.constant(Mat(x))); }, d.ps);
    CHECK(rv.max_rel_err < 1e-4);
    const GradCheckReport rg = grad_check(
        [&](Tape& t, const ParamStore& p) { return dot(t.constant(Mat(w)), d.v.gradient(t, p, t.constant(Mat(x)))); },
        d.ps);
    CHECK(rg.max_rel_err < 1e-4);
  }
}

TEST_CASE("z-path clamping") {
  Draw d = make_net(LyapunovVariant::ICNN, 0);
  REQUIRE_FALSE(d.v.icnn().z_weights().empty());
  const ParamId uz = d.v.icnn().z_weights().front();
  d.ps.value(uz)(0, 0) = -0.3;
  d.ps.value(uz)(0, 1) = 0.5;
  CHECK_FALSE(d.v.constraints_hold(d.ps));
  d.v.enforce_constraints(d.ps);
  CHECK(d.ps.value(uz)(0, 0) == 0.0);
  CHECK(d.ps.value(uz)(0, 1) == 0.5);
  CHECK(d.v.constraints_hold(d.ps));

  // No-op for the LNN variant.
  Draw lnn = make_net(LyapunovVariant::LNN, 0);
  const Vec before = lnn.ps.flat_values();
  lnn.v.enforce_constraints(lnn.ps);
  CHECK(lnn.ps.flat_values() == before);
}

TEST_CASE("convexity survives random parameter updates followed by clamping") {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> normal(0.0, 0.05);
  for (LyapunovVariant variant : {LyapunovVariant::ICNN, LyapunovVariant::ConvexLNN}) {
    Draw d = make_net(variant, 9);
    for (int step = 0; step < 100; ++step) {
      Vec flat = d.ps.flat_values();
      for (Eigen::Index i = 0; i < flat.size(); ++i) flat(i) += normal(rng);
      d.ps.set_flat_values(flat);
      d.v.enforce_constraints(d.ps);
    }
    CHECK(d.v.constraints_hold(d.ps));
    int violations = 0;
    for (int i = 0; i < 1000; ++i) {
      const Vec a = uniform_vec(rng, 2, -6, 6);
      const Vec b = uniform_vec(rng, 2, -6, 6);
      if (d.v.value(d.ps, 0.5 * (a + b)) > 0.5 * (d.v.value(d.ps, a) + d.v.value(d.ps, b)) + 1e-12) ++violations;
    }
    CHECK(violations == 0);
  }
}

TEST_CASE("dimension errors and variant names") {
  Draw d = make_net(LyapunovVariant::ICNN, 0);
  CHECK_THROWS_AS(d.v.value(d.ps, Vec::Zero(3)), DimensionError);
  CHECK(parse_lyapunov_variant("convex-lnn") == LyapunovVariant::ConvexLNN);
  CHECK(to_string(LyapunovVariant::LNN) == "lnn");
  CHECK_THROWS(parse_lyapunov_variant("quadratic"));
}

TEST_CASE("quadratic Lyapunov function") {
  ParamStore ps;
  Mat p(2, 2);
  p << 2, 0, 0, 1;
  QuadraticLyapunov v(ps, "Q", p);
  CHECK(v.value(ps, vec2(1, 2)) == 6.0);
  const Vec g = v.gradient(ps, vec2(1, 2));
  CHECK(g(0) == doctest::Approx(4.0));
  CHECK(g(1) == doctest::Approx(4.0));
}
