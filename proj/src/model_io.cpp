#include "stabledyn/model_io.hpp"

#include <fstream>

namespace stabledyn {

using nlohmann::json;

std::string to_string(Activation a) {
  switch (a) {
    case Activation::Identity: return "identity";
    case Activation::ReLU: return "relu";
    case Activation::SmoothReLU: return "smooth-relu";
    case Activation::Tanh: return "tanh";
    case Activation::Sigmoid: return "sigmoid";
  }
  return "identity";
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::Identity;
  if (s == "relu") return Activation::ReLU;
  if (s == "smooth-relu") return Activation::SmoothReLU;
  if (s == "tanh") return Activation::Tanh;
  if (s == "sigmoid") return Activation::Sigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

namespace {

json stability_json(const StabilityConfig& c) {
  return {{"mode", to_string(c.mode)},
          {"beta", c.beta},
          {"tol", c.rootfind_tol},
          {"max_newton_iters", c.max_newton_iters},
          {"max_bisect_iters", c.max_bisect_iters},
          {"integrating", c.integrating}};
}

StabilityConfig stability_from(const json& j) {
  StabilityConfig c;
  c.mode = parse_stability_mode(j.at("mode").get<std::string>());
  c.beta = j.at("beta").get<double>();
  c.rootfind_tol = j.at("tol").get<double>();
  c.max_newton_iters = j.value("max_newton_iters", c.max_newton_iters);
  c.max_bisect_iters = j.value("max_bisect_iters", c.max_bisect_iters);
  c.integrating = j.value("integrating", false);
  return c;
}

json lyapunov_json(const LyapunovOptions& o) {
  return {{"variant", to_string(o.variant)},
          {"hidden", o.hidden},
          {"epsilon", o.epsilon},
          {"smooth_relu_d", o.smooth_relu_d}};
}

LyapunovOptions lyapunov_from(const json& j) {
  LyapunovOptions o;
  o.variant = parse_lyapunov_variant(j.at("variant").get<std::string>());
  o.hidden = j.at("hidden").get<std::vector<Eigen::Index>>();
  o.epsilon = j.at("epsilon").get<double>();
  o.smooth_relu_d = j.at("smooth_relu_d").get<double>();
  return o;
}

json params_json(const ParamStore& ps) {
  json out = json::object();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Mat& m = ps.value(ParamId{i});
    std::vector<double> flat(m.data(), m.data() + m.size());
    out[ps.name(ParamId{i})] = {{"rows", m.rows()}, {"cols", m.cols()}, {"values", flat}};
  }
  return out;
}

void load_params(ParamStore& ps, const json& j) {
  if (j.size() != ps.size()) throw std::runtime_error("model file has the wrong number of parameters");
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const std::string& name = ps.name(ParamId{i});
    if (!j.contains(name)) throw std::runtime_error("model file is missing parameter " + name);
    const json& e = j.at(name);
    Mat& m = ps.value(ParamId{i});
    const auto values = e.at("values").get<std::vector<double>>();
    if (e.at("rows").get<Eigen::Index>() != m.rows() || e.at("cols").get<Eigen::Index>() != m.cols() ||
        static_cast<Eigen::Index>(values.size()) != m.size()) {
      throw std::runtime_error("parameter " + name + " has the wrong shape");
    }
    std::copy(values.begin(), values.end(), m.data());
  }
}

}  // namespace

json model_to_json(const StableModel& model) {
  if (!model.spec()) throw std::invalid_argument("model has no recorded architecture");
  const StableModelSpec& s = *model.spec();
  return {{"format_version", kModelFormatVersion},
          {"kind", "deterministic"},
          {"stability", stability_json(model.config())},
          {"architecture",
           {{"n", s.n}, {"hidden", s.hidden}, {"activation", to_string(s.fhat_activation)},
            {"lyapunov", lyapunov_json(s.lyapunov)}}},
          {"params", params_json(model.params())}};
}

json model_to_json(const MdnHead& model) {
  if (!model.spec()) throw std::invalid_argument("model has no recorded architecture");
  const MdnSpec& s = *model.spec();
  return {{"format_version", kModelFormatVersion},
          {"kind", "mdn"},
          {"stability", stability_json(model.config())},
          {"architecture",
           {{"n", s.n}, {"k", model.k()}, {"sigma_cap", model.sigma_cap()}, {"hidden", s.hidden},
            {"activation", to_string(s.activation)}, {"lyapunov", lyapunov_json(s.lyapunov)}}},
          {"params", params_json(model.params())}};
}

LoadedModel model_from_json(const json& j) {
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kModelFormatVersion) {
      throw std::runtime_error("unsupported model format version " + std::to_string(version));
    }
    const std::string kind = j.at("kind").get<std::string>();
    const json& a = j.at("architecture");
    const StabilityConfig stability = stability_from(j.at("stability"));
    LoadedModel out;
    if (kind == "deterministic") {
      StableModelSpec s;
      s.n = a.at("n").get<Eigen::Index>();
      s.hidden = a.at("hidden").get<std::vector<Eigen::Index>>();
      s.fhat_activation = parse_activation(a.at("activation").get<std::string>());
      s.lyapunov = lyapunov_from(a.at("lyapunov"));
      s.stability = stability;
      out.deterministic.emplace(StableModel::create(s, 0));
      load_params(out.deterministic->params(), j.at("params"));
    } else if (kind == "mdn") {
      MdnSpec s;
      s.n = a.at("n").get<Eigen::Index>();
      s.k = a.at("k").get<int>();
      s.sigma_cap = a.at("sigma_cap").get<double>();
      s.hidden = a.at("hidden").get<std::vector<Eigen::Index>>();
      s.activation = parse_activation(a.at("activation").get<std::string>());
      s.lyapunov = lyapunov_from(a.at("lyapunov"));
      s.stability = stability;
      out.mdn.emplace(MdnHead::create(s, 0));
      load_params(out.mdn->params(), j.at("params"));
    } else {
      throw std::runtime_error("unknown model kind: " + kind);
    }
    return out;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("malformed model file: ") + e.what());
  }
}

namespace {

void write_json(const json& j, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open " + path + " for writing");
  // nlohmann prints the shortest decimal that parses back to the same double.
  os << j.dump(1) << "\n";
  if (!os) throw std::runtime_error("failed writing " + path);
}

}  // namespace

void save_model(const StableModel& model, const std::string& path) { write_json(model_to_json(model), path); }
void save_model(const MdnHead& model, const std::string& path) { write_json(model_to_json(model), path); }

LoadedModel load_model(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open model file " + path);
  json j;
  try {
    j = json::parse(is);
  } catch (const json::exception& e) {
    throw std::runtime_error("cannot parse model file " + path + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace stabledyn
