#include "helpers.hpp"

#include "stabledyn/training.hpp"

#include <doctest.h>

using namespace stabledyn;
using testutil::uniform_vec;
using testutil::vec2;

namespace {

TransitionDataset small_linear(int count = 5, int steps = 10) {
  GenerateOptions opts;
  opts.system = SystemKind::Linear;
  opts.steps = steps;
  opts.grid = GridSpec{-3, 3, count};
  return generate_dataset(opts);
}

TrainConfig quick(int epochs, LossKind loss = LossKind::MSE) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 32;
  c.seed = 5;
  c.loss = loss;
  return c;
}

}  // namespace

TEST_CASE("first Adam step moves each coordinate by the learning rate") {
  ParamStore ps;
  ParamId w = ps.add("w", 3, 1);
  ps.value(w) << 1.0, 2.0, 3.0;
  ps.grad(w) << 0.5, -20.0, 1e-3;
  TrainConfig cfg;
  AdamState st(ps);
  adam_step(ps, st, cfg);
  CHECK(ps.value(w)(0, 0) == doctest::Approx(1.0 - cfg.lr).epsilon(1e-6));
  CHECK(ps.value(w)(1, 0) == doctest::Approx(2.0 + cfg.lr).epsilon(1e-6));
  CHECK(ps.value(w)(2, 0) == doctest::Approx(3.0 - cfg.lr).epsilon(1e-6));
  CHECK(ps.grad(w).norm() == 0.0);
  CHECK(st.step_count() == 1);

  const Vec before = ps.flat_values();
  AdamState fresh(ps);
  adam_step(ps, fresh, cfg);
  CHECK(ps.flat_values() == before);
}

TEST_CASE("Adam rejects non-finite gradients by name") {
  ParamStore ps;
  ps.add("fine", 1, 1);
  ParamId bad = ps.add("broken.W0", 2, 2);
  ps.grad(bad)(1, 0) = std::nan("");
  AdamState st(ps);
  try {
    adam_step(ps, st, TrainConfig{});
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("broken.W0") != std::string::npos);
  }
}

TEST_CASE("zero learning rate leaves parameters unchanged and still reports the loss") {
  StableModel m = testutil::random_model(1, StabilityMode::Convex, LyapunovVariant::ICNN);
  TransitionDataset data;
  data.add(vec2(1, 2), vec2(0.5, 0.5));
  const Vec before = m.params().flat_values();
  TrainConfig cfg;
  cfg.lr = 0.0;
  cfg.epochs = 1;
  const TrainReport r = train(m, data, cfg);
  CHECK(m.params().flat_values() == before);
  REQUIRE(r.epoch_loss.size() == 1);
  CHECK(r.epoch_loss[0] == doctest::Approx(evaluate_mse(m, data)).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
  const TransitionDataset data = small_linear();
  StableModel a = testutil::random_model(3, StabilityMode::Implicit, LyapunovVariant::LNN);
  StableModel b = testutil::random_model(3, StabilityMode::Implicit, LyapunovVariant::LNN);
  const TrainReport ra = train(a, data, quick(10));
  const TrainReport rb = train(b, data, quick(10));
  CHECK(a.params().flat_values() == b.params().flat_values());
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(ra.stability_violations == rb.stability_violations);
}

TEST_CASE("training reduces the loss, keeps constraints and never violates the decrease bound") {
  const TransitionDataset data = small_linear();
  for (auto [mode, variant] : {std::pair{StabilityMode::Convex, LyapunovVariant::ICNN},
                               std::pair{StabilityMode::Implicit, LyapunovVariant::ConvexLNN}}) {
    StableModel m = testutil::random_model(4, mode, variant);
    const TrainReport r = train(m, data, quick(30));
    REQUIRE(r.epoch_loss.size() == 30);
    for (double l : r.epoch_loss) CHECK(std::isfinite(l));
    CHECK(r.epoch_loss.back() < 0.5 * r.epoch_loss.front());
    CHECK(r.stability_violations == 0);
    CHECK(dynamic_cast<const LyapunovNet&>(m.lyapunov()).constraints_hold(m.params()));
    CHECK(count_v_violations(m, data) == 0);
    const auto j = r.to_json();
    CHECK(j.at("config").at("lr") == 0.0025);
    CHECK(j.at("epoch_loss").size() == 30);
  }
}

TEST_CASE("MDN training with NLL") {
  GenerateOptions opts;
  opts.system = SystemKind::LinearStochastic;
  opts.steps = 10;
  opts.grid = GridSpec{-3, 3, 5};
  const TransitionDataset data = generate_dataset(opts);
  MdnHead m = testutil::random_mdn(2, StabilityMode::Convex, LyapunovVariant::ICNN, 2);
  const double before = evaluate_nll(m, data);
  const TrainReport r = train(m, data, quick(15, LossKind::NLL));
  CHECK(r.stability_violations == 0);
  // The grid contains the origin, whose 10 transitions carry no likelihood.
  CHECK(r.skipped_transitions == 10);
  CHECK(evaluate_nll(m, data) < before);
  CHECK(count_v_violations(m, data) == 0);
  CHECK_THROWS_AS(train(m, data, quick(1, LossKind::MSE)), std::invalid_argument);
}

TEST_CASE("divergence reports the epoch") {
  StableModel m = testutil::random_model(1, StabilityMode::None, LyapunovVariant::ICNN);
  TransitionDataset data;
  data.add(vec2(1, 1), vec2(std::nan(""), 0));
  try {
    train(m, data, quick(3));
    FAIL("expected NumericalError");
  } catch (const NumericalError& e) {
    CHECK(std::string(e.what()).find("epoch 0") != std::string::npos);
  }
}

TEST_CASE("training contract errors") {
  StableModel m = testutil::random_model(1, StabilityMode::None, LyapunovVariant::ICNN);
  CHECK_THROWS_AS(train(m, TransitionDataset{}, quick(1)), std::invalid_argument);
  CHECK_THROWS_AS(train(m, small_linear(), quick(1, LossKind::NLL)), std::invalid_argument);
  TrainConfig bad;
  bad.beta1 = 1.0;
  CHECK_THROWS(bad.validate());
  CHECK_THROWS_AS(evaluate_mse(m, TransitionDataset{}), std::invalid_argument);
}

TEST_CASE("evaluation metrics") {
  const TransitionDataset data = small_linear();
  StableModel perfect = testutil::quadratic_model(example_linear_matrix(), Vec::Zero(2), StabilityMode::None);
  CHECK(evaluate_mse(perfect, data) == doctest::Approx(0.0).epsilon(1e-30));
  CHECK(evaluate(perfect, data, Metric::MSE) == doctest::Approx(0.0).epsilon(1e-30));
  CHECK_THROWS(evaluate(perfect, data, Metric::NLL));

  StableModel convex = testutil::random_model(9, StabilityMode::Convex, LyapunovVariant::ICNN);
  CHECK(evaluate(convex, data, Metric::VViolations) == 0.0);

  // k = 1 unit Gaussian evaluated at its own mean.
  ParamStore ps;
  Mlp trunk = testutil::linear_map(ps, "trunk", Mat::Zero(4, 2), Vec::Zero(4));
  Mlp coeff = testutil::linear_map(ps, "coeff", Mat::Zero(1, 2), Vec::Zero(1));
  auto v = std::make_unique<QuadraticLyapunov>(ps, "V", Mat::Identity(2, 2));
  MdnHead unit(std::move(ps), std::move(trunk), std::move(coeff), std::move(v), StabilityConfig{}, 1, 1.0);
  TransitionDataset at_mean;
  for (int i = 0; i < 5; ++i) at_mean.add(vec2(i, -i), Vec::Zero(2));
  CHECK(evaluate_nll(unit, at_mean) == doctest::Approx(2 * 0.9189385332046727).epsilon(1e-14));

  CHECK(parse_metric("v-violations") == Metric::VViolations);
  CHECK_THROWS(parse_metric("mae"));
}

TEST_CASE("trajectory metrics") {
  GenerateOptions opts;
  opts.system = SystemKind::Linear;
  opts.steps = 6;
  opts.initial_conditions = {vec2(1, 2), vec2(-3, 1)};
  const std::vector<Trajectory> ref = simulate(opts);
  StableModel perfect = testutil::quadratic_model(example_linear_matrix(), Vec::Zero(2), StabilityMode::None);
  CHECK(rollout_mse(perfect, ref) == doctest::Approx(0.0).epsilon(1e-30));

  MdnHead m = testutil::random_mdn(1, StabilityMode::Implicit, LyapunovVariant::ICNN);
  const std::vector<double> per_step = per_step_nll(m, ref);
  REQUIRE(per_step.size() == 6);
  const double expected = 0.5 * (m.nll(ref[0].states[2], ref[0].states[3]) + m.nll(ref[1].states[2], ref[1].states[3]));
  CHECK(per_step[2] == doctest::Approx(expected).epsilon(1e-14));
}
