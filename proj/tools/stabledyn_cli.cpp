#include "stabledyn/dataset.hpp"
#include "stabledyn/model_io.hpp"
#include "stabledyn/systems.hpp"
#include "stabledyn/training.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <Eigen/Eigenvalues>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

using namespace stabledyn;
using nlohmann::json;

namespace {

// Usage errors detected after parsing (incompatible flag values and the like).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError(flag + ": '" + cell + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError(flag + " needs at least one value");
  return out;
}

Vec to_vec(const std::vector<double>& v) { return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size())); }

std::vector<Eigen::Index> parse_dims(const std::string& text, const std::string& flag) {
  std::vector<Eigen::Index> out;
  for (double d : parse_list(text, flag)) {
    if (d < 1 || d != std::floor(d)) throw UsageError(flag + " needs positive integers");
    out.push_back(static_cast<Eigen::Index>(d));
  }
  return out;
}

// Square matrix from a scalar or a row-major list of n*n entries.
Mat parse_square(const std::string& text, const std::string& flag) {
  const auto v = parse_list(text, flag);
  const auto n = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(v.size()))));
  if (n * n != static_cast<Eigen::Index>(v.size())) throw UsageError(flag + " needs n*n entries");
  Mat m(n, n);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < n; ++c) m(r, c) = v[static_cast<std::size_t>(r * n + c)];
  }
  return m;
}

json matrix_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) row[static_cast<std::size_t>(c)] = m(r, c);
    rows.push_back(row);
  }
  return rows;
}

void print_json(const json& j) { std::cout << j.dump(2) << std::endl; }

// --- gen ---------------------------------------------------------------

struct GenArgs {
  std::string system;
  double h = 0.0;
  int steps = 40;
  std::uint64_t seed = 0;
  std::string out;
  std::string grid;
  std::string x0;
};

double default_h(SystemKind s) {
  switch (s) {
    case SystemKind::Sde: return 0.05;
    case SystemKind::Lorenz: return 0.01;
    default: return 0.1;
  }
}

int run_gen(const GenArgs& a) {
  GenerateOptions opts;
  try {
    opts.system = parse_system(a.system);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  opts.h = a.h > 0.0 ? a.h : default_h(opts.system);
  opts.steps = a.steps;
  opts.seed = a.seed;
  if (a.grid.empty() == a.x0.empty()) throw UsageError("give exactly one of --grid and --x0");
  if (!a.grid.empty()) {
    const auto g = parse_list(a.grid, "--grid");
    if (g.size() != 3) throw UsageError("--grid takes lo,hi,count");
    opts.grid = GridSpec{g[0], g[1], static_cast<int>(g[2])};
  } else {
    const Vec x0 = to_vec(parse_list(a.x0, "--x0"));
    if (x0.size() != system_dim(opts.system)) {
      throw UsageError("--x0 has " + std::to_string(x0.size()) + " entries, system " + a.system +
                       " needs " + std::to_string(system_dim(opts.system)));
    }
    opts.initial_conditions.push_back(x0);
  }
  const TransitionDataset data = generate_dataset(opts);
  write_dataset_csv(data, a.out);
  write_dataset_metadata(data, a.out + ".json");
  print_json({{"out", a.out},
              {"metadata", a.out + ".json"},
              {"system", data.system},
              {"h", data.dt},
              {"steps", data.steps},
              {"seed", data.seed},
              {"transitions", data.size()}});
  return 0;
}

// --- train -------------------------------------------------------------

struct TrainArgs {
  std::string model;
  std::string v = "icnn";
  std::string data;
  int epochs = 200;
  double lr = 0.0025;
  double beta = 0.99;
  double tol = 1e-3;
  int k = 2;
  std::uint64_t seed = 0;
  int batch_size = 0;
  std::string hidden = "25,25";
  std::string v_hidden = "25,25";
  bool integrating = false;
  double sigma_cap = 1.0;
  std::string out;
  bool quiet = false;
};

int run_train(const TrainArgs& a) {
  static const std::set<std::string> models = {"convex", "implicit", "projection", "none",
                                               "mdn-convex", "mdn-implicit", "mdn-none"};
  if (!models.count(a.model)) throw UsageError("unknown --model " + a.model);
  LyapunovOptions lo;
  try {
    lo.variant = parse_lyapunov_variant(a.v);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  lo.hidden = parse_dims(a.v_hidden, "--v-hidden");
  const bool mdn = a.model.rfind("mdn-", 0) == 0;
  StabilityConfig sc;
  sc.mode = parse_stability_mode(mdn ? a.model.substr(4) : a.model);
  sc.beta = a.beta;
  sc.rootfind_tol = a.tol;
  sc.integrating = a.integrating;
  try {
    sc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  if (sc.mode == StabilityMode::Convex && lo.variant == LyapunovVariant::LNN) {
    throw UsageError(
        "--model " + a.model +
        " needs a convex Lyapunov function: closed-form scaling only guarantees decrease when V is "
        "convex, and an LNN is not. Use --v icnn or --v convex-lnn, or the implicit model.");
  }
  if (mdn && a.k < 1) throw UsageError("--k must be at least 1");

  const TransitionDataset data = read_dataset_csv(a.data);
  if (data.empty()) throw std::runtime_error("dataset " + a.data + " has no transitions");

  TrainConfig tc;
  tc.lr = a.lr;
  tc.epochs = a.epochs;
  tc.batch_size = a.batch_size;
  tc.seed = a.seed;
  tc.loss = mdn ? LossKind::NLL : LossKind::MSE;
  try {
    tc.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const EpochCallback progress = [&](int epoch, double loss) {
    if (!a.quiet) std::cerr << "epoch " << epoch + 1 << "/" << a.epochs << " loss " << loss << "\n";
  };

  TrainReport report;
  json metric;
  if (mdn) {
    MdnSpec s;
    s.n = data.dim();
    s.k = a.k;
    s.hidden = parse_dims(a.hidden, "--hidden");
    s.lyapunov = lo;
    s.stability = sc;
    s.sigma_cap = a.sigma_cap;
    MdnHead model = MdnHead::create(s, a.seed);
    report = train(model, data, tc, progress);
    save_model(model, a.out);
    metric = {{"nll", evaluate_nll(model, data)}};
  } else {
    StableModelSpec s;
    s.n = data.dim();
    s.hidden = parse_dims(a.hidden, "--hidden");
    s.lyapunov = lo;
    s.stability = sc;
    StableModel model = StableModel::create(s, a.seed);
    report = train(model, data, tc, progress);
    save_model(model, a.out);
    metric = {{"mse", evaluate_mse(model, data)}};
  }
  json j = report.to_json();
  j["model"] = a.model;
  j["v"] = a.v;
  j["beta"] = a.beta;
  j["tol"] = a.tol;
  if (mdn) j["k"] = a.k;
  j["integrating"] = a.integrating;
  j["data"] = a.data;
  j["model_file"] = a.out;
  j["train_metric"] = metric;
  const std::string report_path = a.out + ".report.json";
  std::ofstream(report_path) << j.dump(2) << "\n";
  j["report_file"] = report_path;
  j.erase("epoch_loss");
  print_json(j);
  return 0;
}

// --- rollout -----------------------------------------------------------

struct RolloutArgs {
  std::string model_file;
  std::string x0;
  int steps = 100;
  std::uint64_t seed = 0;
  int samples = 1;
  std::string out;
};

void write_row(std::ostream& os, const std::string& path, int t, const Vec& x, double v) {
  if (!path.empty()) os << path << ",";
  os << t;
  for (Eigen::Index i = 0; i < x.size(); ++i) os << "," << x(i);
  os << "," << v << "\n";
}

int run_rollout(const RolloutArgs& a) {
  if (a.steps < 0) throw UsageError("--steps must be nonnegative");
  if (a.samples < 1) throw UsageError("--samples must be at least 1");
  LoadedModel lm = load_model(a.model_file);
  const Vec x0 = to_vec(parse_list(a.x0, "--x0"));
  if (x0.size() != lm.dim()) {
    throw DimensionError("--x0 has " + std::to_string(x0.size()) + " entries but the model state has " +
                         std::to_string(lm.dim()));
  }
  std::ofstream os(a.out);
  if (!os) throw std::runtime_error("cannot open " + a.out + " for writing");
  os << std::setprecision(17);
  const Eigen::Index n = x0.size();
  json summary = {{"out", a.out}, {"steps", a.steps}};
  if (lm.is_mdn()) {
    os << "path,t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    os << ",V\n";
    bool mean_written = false;
    double max_abs = 0.0;
    for (int m = 0; m < a.samples; ++m) {
      std::mt19937_64 rng(a.seed + static_cast<std::uint64_t>(m));
      const StochasticRollout r = lm.mdn->rollout(x0, a.steps, rng);
      if (!mean_written) {
        for (int t = 0; t <= a.steps; ++t) {
          write_row(os, "mean", t, r.means.states[static_cast<std::size_t>(t)],
                    r.means.v_values[static_cast<std::size_t>(t)]);
        }
        summary["final_mean"] = std::vector<double>(r.means.states.back().data(),
                                                    r.means.states.back().data() + n);
        mean_written = true;
      }
      for (int t = 0; t <= a.steps; ++t) {
        const Vec& x = r.states.states[static_cast<std::size_t>(t)];
        max_abs = std::max(max_abs, x.cwiseAbs().maxCoeff());
        write_row(os, std::to_string(m), t, x, r.states.v_values[static_cast<std::size_t>(t)]);
      }
    }
    summary["samples"] = a.samples;
    summary["max_abs_state"] = max_abs;
  } else {
    os << "t";
    for (Eigen::Index i = 0; i < n; ++i) os << ",x" << i + 1;
    os << ",V\n";
    const Trajectory traj = lm.deterministic->rollout(x0, a.steps);
    for (int t = 0; t <= a.steps; ++t) {
      write_row(os, "", t, traj.states[static_cast<std::size_t>(t)], traj.v_values[static_cast<std::size_t>(t)]);
    }
    summary["final_state"] = std::vector<double>(traj.states.back().data(), traj.states.back().data() + n);
    summary["final_v"] = traj.v_values.back();
  }
  if (!os) throw std::runtime_error("failed writing " + a.out);
  print_json(summary);
  return 0;
}

// --- eval --------------------------------------------------------------

struct EvalArgs {
  std::string model_file;
  std::string data;
  std::string metric = "mse";
};

int run_eval(const EvalArgs& a) {
  Metric metric;
  try {
    metric = parse_metric(a.metric);
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  LoadedModel lm = load_model(a.model_file);
  const TransitionDataset data = read_dataset_csv(a.data);
  if (data.dim() != lm.dim()) throw DimensionError("dataset dimension does not match the model");
  if (metric == Metric::NLL && !lm.is_mdn()) throw UsageError("--metric nll needs a mixture density model");
  const double value = lm.is_mdn() ? evaluate(*lm.mdn, data, metric) : evaluate(*lm.deterministic, data, metric);
  json j = {{"metric", a.metric}, {"transitions", data.size()}};
  if (metric == Metric::VViolations) {
    j["value"] = static_cast<long>(value);
  } else {
    j["value"] = value;
  }
  print_json(j);
  return 0;
}

// --- lyap-solve --------------------------------------------------------

struct LyapArgs {
  std::string a;
  std::string b = "0";
  std::string q = "1";
};

int run_lyap(const LyapArgs& args) {
  const Mat a = parse_square(args.a, "--a");
  Mat b = parse_square(args.b, "--b");
  Mat q = parse_square(args.q, "--q");
  const Eigen::Index n = a.rows();
  // A scalar B or Q stands for that multiple of the identity.
  if (b.rows() == 1 && n > 1) b = b(0, 0) * Mat::Identity(n, n);
  if (q.rows() == 1 && n > 1) q = q(0, 0) * Mat::Identity(n, n);
  if (b.rows() != n || q.rows() != n) throw UsageError("--a, --b and --q must have matching sizes");
  const Mat p = solve_discrete_lyapunov(a, b, q);
  const Mat residual = a.transpose() * p * a + b.transpose() * p * b - p + q;
  Eigen::SelfAdjointEigenSolver<Mat> eig(p);
  const Vec ev = eig.eigenvalues();
  print_json({{"P", matrix_json(p)},
              {"eigenvalues", std::vector<double>(ev.data(), ev.data() + ev.size())},
              {"residual", residual.cwiseAbs().maxCoeff()},
              {"positive_definite", true}});
  return 0;
}

// --- gradcheck ---------------------------------------------------------

struct GradArgs {
  std::string model_file;
  std::string data;
  int samples = 8;
  double h = 1e-5;
};

int run_gradcheck(const GradArgs& a) {
  if (a.samples < 1) throw UsageError("--samples must be at least 1");
  LoadedModel lm = load_model(a.model_file);
  const TransitionDataset data = read_dataset_csv(a.data);
  if (data.dim() != lm.dim()) throw DimensionError("dataset dimension does not match the model");
  const std::size_t count = std::min<std::size_t>(data.size(), static_cast<std::size_t>(a.samples));
  if (count == 0) throw std::runtime_error("dataset has no transitions");
  TapedLoss loss;
  ParamStore* params = nullptr;
  if (lm.is_mdn()) {
    const MdnHead& m = *lm.mdn;
    loss = [&m, &data, count](Tape& tape, const ParamStore&) {
      Var total = m.record_nll(tape, data.x[0], data.x_next[0]);
      for (std::size_t i = 1; i < count; ++i) total = total + m.record_nll(tape, data.x[i], data.x_next[i]);
      return total;
    };
    params = &lm.mdn->params();
  } else {
    const StableModel& m = *lm.deterministic;
    loss = [&m, &data, count](Tape& tape, const ParamStore&) {
      Var total = tape.constant(0.0);
      for (std::size_t i = 0; i < count; ++i) {
        Var d = m.record_step(tape, data.x[i]) - tape.constant(Mat(data.x_next[i]));
        total = total + dot(d, d);
      }
      return total;
    };
    params = &lm.deterministic->params();
  }
  const GradCheckReport r = grad_check(loss, *params, a.h);
  print_json({{"max_rel_err", r.max_rel_err},
              {"worst_parameter", r.worst_name},
              {"worst_index", r.worst_index},
              {"analytic", r.analytic},
              {"numeric", r.numeric},
              {"transitions", count},
              {"parameters", params->scalar_count()}});
  return 0;
}

// --- config files ------------------------------------------------------

std::string json_scalar_text(const json& v) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_array()) {
    std::string out;
    for (const auto& e : v) out += (out.empty() ? "" : ",") + json_scalar_text(e);
    return out;
  }
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_number_unsigned()) return std::to_string(v.get<unsigned long long>());
  std::ostringstream ss;
  ss << std::setprecision(17) << v.get<double>();
  return ss.str();
}

// Appends "--key value" for every config entry whose flag is not already on
// the command line, so explicit flags win.
std::vector<std::string> merge_config(std::vector<std::string> args) {
  std::string config_path;
  std::vector<std::string> kept;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(9);
    } else {
      kept.push_back(args[i]);
    }
  }
  if (config_path.empty()) return args;
  std::ifstream is(config_path);
  if (!is) throw std::runtime_error("cannot open config file " + config_path);
  const json cfg = json::parse(is);
  if (!cfg.is_object()) throw std::runtime_error("config file must hold a JSON object");
  auto given = [&](const std::string& flag) {
    for (const auto& a : kept) {
      if (a == flag || a.rfind(flag + "=", 0) == 0) return true;
    }
    return false;
  };
  for (const auto& [key, value] : cfg.items()) {
    const std::string flag = "--" + key;
    if (given(flag)) continue;
    if (value.is_boolean()) {
      if (value.get<bool>()) kept.push_back(flag);
    } else if (!value.is_null()) {
      kept.push_back(flag + "=" + json_scalar_text(value));
    }
  }
  return kept;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stable-by-construction dynamics models: data generation, training, rollout, evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");
  std::string config_unused;
  app.add_option("--config", config_unused, "JSON file mirroring the flags; explicit flags win");

  GenArgs gen;
  auto* g = app.add_subcommand("gen", "Simulate a reference system and write a transition dataset");
  g->add_option("--system", gen.system, "linear|linear-stoch|saturated|sde|lorenz")->required();
  // --h is the step size here, so help is only --help.
  g->set_help_flag("--help", "Print this help message and exit");
  g->add_option("--h", gen.h, "Integration step (default depends on the system)");
  g->add_option("--steps", gen.steps, "Steps per trajectory");
  g->add_option("--seed", gen.seed, "Base seed; trajectory i uses seed + i");
  g->add_option("--out", gen.out, "Output CSV path")->required();
  g->add_option("--grid", gen.grid, "Initial-condition grid lo,hi,count");
  g->add_option("--x0", gen.x0, "Single initial condition v1,v2,...");

  TrainArgs tr;
  auto* t = app.add_subcommand("train", "Train a model on a dataset");
  t->add_option("--model", tr.model, "convex|implicit|projection|none|mdn-convex|mdn-implicit|mdn-none")
      ->required();
  t->add_option("--v", tr.v, "Lyapunov network: icnn|lnn|convex-lnn");
  t->add_option("--data", tr.data, "Dataset CSV")->required();
  t->add_option("--epochs", tr.epochs);
  t->add_option("--lr", tr.lr);
  t->add_option("--beta", tr.beta, "Decrease rate in (0,1)");
  t->add_option("--tol", tr.tol, "Root-finder tolerance");
  t->add_option("--k", tr.k, "Mixture components (MDN models)");
  t->add_option("--seed", tr.seed);
  t->add_option("--batch-size", tr.batch_size, "Minibatch size, 0 for full batch");
  t->add_option("--hidden", tr.hidden, "Hidden widths of the dynamics network");
  t->add_option("--v-hidden", tr.v_hidden, "Hidden widths of the Lyapunov network");
  t->add_flag("--integrating", tr.integrating, "Predict increments: x_next = x + f(x)");
  t->add_option("--sigma-cap", tr.sigma_cap, "Variance tether for stabilized MDNs");
  t->add_option("--out", tr.out, "Model file path")->required();
  t->add_flag("--quiet", tr.quiet, "No per-epoch progress on stderr");

  RolloutArgs ro;
  auto* r = app.add_subcommand("rollout", "Roll a trained model forward from x0");
  r->add_option("--model-file", ro.model_file)->required();
  r->add_option("--x0", ro.x0)->required();
  r->add_option("--steps", ro.steps);
  r->add_option("--seed", ro.seed);
  r->add_option("--samples", ro.samples, "Sampled paths for MDN models");
  r->add_option("--out", ro.out)->required();

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "Evaluate a model on a dataset");
  e->add_option("--model-file", ev.model_file)->required();
  e->add_option("--data", ev.data)->required();
  e->add_option("--metric", ev.metric, "mse|nll|v-violations");

  LyapArgs ly;
  auto* l = app.add_subcommand("lyap-solve", "Solve A^T P A + B^T P B - P = -Q");
  l->add_option("--a", ly.a, "Scalar or row-major n*n entries")->required();
  l->add_option("--b", ly.b);
  l->add_option("--q", ly.q);

  GradArgs gc;
  auto* c = app.add_subcommand("gradcheck", "Compare taped gradients with central differences");
  c->add_option("--model-file", gc.model_file)->required();
  c->add_option("--data", gc.data)->required();
  c->add_option("--samples", gc.samples, "Transitions in the checked loss");
  c->set_help_flag("--help", "Print this help message and exit");
  c->add_option("--h", gc.h, "Finite-difference step");

  try {
    std::vector<std::string> args(argv + 1, argv + argc);
    args = merge_config(std::move(args));
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::CallForAllHelp& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }

  try {
    if (*g) return run_gen(gen);
    if (*t) return run_train(tr);
    if (*r) return run_rollout(ro);
    if (*e) return run_eval(ev);
    if (*l) return run_lyap(ly);
    if (*c) return run_gradcheck(gc);
  } catch (const UsageError& ex) {
    std::cerr << "usage error: " << ex.what() << "\n";
    return 2;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
  return 2;
}
