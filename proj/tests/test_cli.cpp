#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

using nlohmann::json;

namespace {

struct Result {
  int rc = -1;
  std::string out;
};

Result run(const std::string& args) {
  const std::string cmd = std::string(STABLEDYN_CLI_PATH) + " " + args + " 2>/dev/null";
  Result r;
  FILE* pipe = popen(cmd.c_str(), "r");
  REQUIRE(pipe != nullptr);
  std::array<char, 4096> buf{};
  while (std::fgets(buf.data(), static_cast<int>(buf.size()), pipe)) r.out += buf.data();
  const int status = pclose(pipe);
  r.rc = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

json run_json(const std::string& args) {
  const Result r = run(args);
  INFO(args);
  REQUIRE(r.rc == 0);
  return json::parse(r.out);
}

std::vector<std::string> lines(const std::string& path) {
  std::ifstream is(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(is, line);) out.push_back(line);
  return out;
}

// Small dataset and trained models shared by several cases.
void ensure_fixtures() {
  static bool done = false;
  if (done) return;
  run_json("gen --system linear --grid=-3,3,4 --steps 10 --out cli_small.csv");
  run_json("gen --system linear-stoch --grid=-3,3,4 --steps 10 --seed 3 --out cli_stoch.csv");
  run_json("train --model convex --v icnn --data cli_small.csv --epochs 3 --batch-size 32 "
           "--hidden 8 --v-hidden 8 --quiet --out cli_convex.json");
  run_json("train --model mdn-implicit --v icnn --data cli_stoch.csv --epochs 2 --batch-size 32 "
           "--hidden 8 --v-hidden 8 --quiet --out cli_mdn.json");
  done = true;
}

}  // namespace

TEST_CASE("gen writes the full 14x14 grid dataset") {
  const json j = run_json("gen --system linear --grid=-6,6,14 --steps 40 --out cli_ex1.csv");
  CHECK(j.at("transitions") == 7840);
  CHECK(j.at("h") == 0.1);
  CHECK(lines("cli_ex1.csv").size() == 7841);
  std::ifstream meta("cli_ex1.csv.json");
  CHECK(meta.good());
}

TEST_CASE("gen uses system-dependent default step sizes") {
  CHECK(run_json("gen --system sde --x0 1,1 --steps 2 --out cli_sde.csv").at("h") == 0.05);
  CHECK(run_json("gen --system lorenz --x0 1,1,1 --steps 2 --out cli_lz.csv").at("h") == 0.01);
}

TEST_CASE("usage errors exit with status 2") {
  ensure_fixtures();
  CHECK(run("gen --grid=-1,1,2 --out x.csv").rc == 2);
  CHECK(run("gen --system linear --out x.csv").rc == 2);
  CHECK(run("gen --system linear --grid=-1,1,2 --x0 1,1 --out x.csv").rc == 2);
  CHECK(run("gen --system linear --x0 1,2,3 --out x.csv").rc == 2);
  CHECK(run("gen --system pendulum --x0 1,1 --out x.csv").rc == 2);
  CHECK(run("frobnicate").rc == 2);
  CHECK(run("").rc == 2);
  CHECK(run("eval --model-file cli_convex.json --data cli_small.csv --metric mae").rc == 2);
}

TEST_CASE("lyap-solve matches closed forms") {
  const json scalar = run_json("lyap-solve --a 0.9");
  CHECK(scalar.at("P")[0][0].get<double>() == doctest::Approx(1.0 / 0.19).epsilon(1e-12));
  CHECK(scalar.at("positive_definite") == true);

  const json ex1 = run_json("lyap-solve --a 0.9,1,0,0.9 --b 0.1");
  CHECK(ex1.at("P")[0][1].get<double>() == doctest::Approx(27.7778).epsilon(1e-5));
  CHECK(ex1.at("P")[1][1].get<double>() == doctest::Approx(314.1975).epsilon(1e-5));
  CHECK(ex1.at("residual").get<double>() <= 1e-10);

  CHECK(run("lyap-solve --a 1.1").rc == 1);
  CHECK(run("lyap-solve --a 1,2,3").rc == 2);
}

TEST_CASE("train enforces convexity for closed-form scaling") {
  ensure_fixtures();
  CHECK(run("train --model convex --v lnn --data cli_small.csv --epochs 1 --quiet --out cli_bad.json").rc == 2);
  CHECK(run("train --model mdn-convex --v lnn --data cli_stoch.csv --epochs 1 --quiet --out cli_bad.json").rc == 2);
  const json ok = run_json("train --model implicit --v lnn --data cli_small.csv --epochs 1 --batch-size 32 "
                           "--hidden 8 --v-hidden 8 --quiet --out cli_implicit.json");
  CHECK(ok.at("beta") == 0.99);
  CHECK(ok.at("stability_violations") == 0);
  CHECK(run("train --model convex --beta 1.5 --data cli_small.csv --quiet --out cli_bad.json").rc == 2);
  CHECK(run("train --model convex --data missing.csv --quiet --out cli_bad.json").rc == 1);
}

TEST_CASE("train writes a report next to the model") {
  ensure_fixtures();
  std::ifstream is("cli_convex.json.report.json");
  REQUIRE(is.good());
  const json r = json::parse(is);
  CHECK(r.at("epoch_loss").size() == 3);
  CHECK(r.at("config").at("lr") == 0.0025);
}

TEST_CASE("deterministic rollout") {
  ensure_fixtures();
  run_json("rollout --model-file cli_convex.json --x0 2,-1 --steps 0 --out cli_r0.csv");
  const auto zero = lines("cli_r0.csv");
  REQUIRE(zero.size() == 2);
  CHECK(zero[0] == "t,x1,x2,V");
  CHECK(zero[1].rfind("0,2,-1,", 0) == 0);

  const json j = run_json("rollout --model-file cli_convex.json --x0 2,-1 --steps 25 --out cli_r25.csv");
  const auto rows = lines("cli_r25.csv");
  REQUIRE(rows.size() == 27);
  double prev = 1e300;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const double v = std::stod(rows[i].substr(rows[i].rfind(',') + 1));
    CHECK(v <= prev + 1e-3);
    prev = v;
  }
  CHECK(j.at("final_v").get<double>() == doctest::Approx(prev));

  CHECK(run("rollout --model-file cli_convex.json --x0 1,2,3 --out cli_bad.csv").rc == 1);
  CHECK(run("rollout --model-file cli_convex.json --x0 1,2 --steps -1 --out cli_bad.csv").rc == 2);
}

TEST_CASE("MDN rollouts are reproducible per seed") {
  ensure_fixtures();
  run_json("rollout --model-file cli_mdn.json --x0 2,-1 --steps 10 --samples 3 --seed 7 --out cli_m1.csv");
  run_json("rollout --model-file cli_mdn.json --x0 2,-1 --steps 10 --samples 3 --seed 7 --out cli_m2.csv");
  run_json("rollout --model-file cli_mdn.json --x0 2,-1 --steps 10 --samples 3 --seed 8 --out cli_m3.csv");
  const auto a = lines("cli_m1.csv");
  const auto b = lines("cli_m2.csv");
  const auto c = lines("cli_m3.csv");
  CHECK(a.size() == 1 + 4 * 11);
  CHECK(a[0] == "path,t,x1,x2,V");
  CHECK(a == b);
  CHECK(a != c);
  // The mean path does not depend on the seed.
  CHECK(std::vector(a.begin(), a.begin() + 12) == std::vector(c.begin(), c.begin() + 12));
}

TEST_CASE("eval metrics") {
  ensure_fixtures();
  const json v = run_json("eval --model-file cli_convex.json --data cli_small.csv --metric v-violations");
  CHECK(v.at("value") == 0);
  CHECK(v.at("transitions") == 160);
  const json mse = run_json("eval --model-file cli_convex.json --data cli_small.csv");
  CHECK(mse.at("value").get<double>() >= 0.0);
  const json nll = run_json("eval --model-file cli_mdn.json --data cli_stoch.csv --metric nll");
  CHECK(std::isfinite(nll.at("value").get<double>()));
  CHECK(run("eval --model-file cli_convex.json --data cli_small.csv --metric nll").rc == 2);
  CHECK(run("eval --model-file cli_convex.json --data cli_lz.csv").rc == 1);
}

TEST_CASE("gradcheck agrees with finite differences") {
  ensure_fixtures();
  CHECK(run_json("gradcheck --model-file cli_convex.json --data cli_small.csv").at("max_rel_err").get<double>() < 1e-4);
  CHECK(run_json("gradcheck --model-file cli_mdn.json --data cli_stoch.csv --samples 4").at("max_rel_err").get<double>() <
        1e-4);
}

TEST_CASE("config files fill in flags that were not given") {
  ensure_fixtures();
  {
    std::ofstream os("cli_cfg.json");
    os << R"({"model": "convex", "data": "cli_small.csv", "epochs": 1, "batch-size": 64,
             "hidden": [6], "v-hidden": [6], "beta": 0.9, "quiet": true})";
  }
  const json a = run_json("train --config cli_cfg.json --out cli_cfg_model.json");
  CHECK(a.at("beta") == 0.9);
  CHECK(a.at("config").at("batch_size") == 64);
  const json b = run_json("train --config cli_cfg.json --beta 0.95 --out cli_cfg_model.json");
  CHECK(b.at("beta") == 0.95);
  CHECK(run("train --config missing_cfg.json --out cli_cfg_model.json").rc == 2);
}
