#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "svie/config.hpp"
#include "svie/report.hpp"

#include <cmath>
#include <random>
#include <sstream>

using namespace svie;

namespace {

std::string error_of(const std::string& text) {
  try {
    const Config cfg = Config::parse(text, "t.ini");
    validate(cfg, experiment_schema());
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("parse: sections, comments, lists") {
  const Config cfg = Config::parse(
      "# leading comment\n"
      "[tree]\n"
      "N = 6   ; trailing\n"
      "T=0.5\n"
      "\n"
      "[kernel]\n"
      "name = exp_sum\n"
      "weights = 1, 0.5 ,2\n",
      "a.ini");
  CHECK(cfg.integer("tree", "N") == 6);
  CHECK(cfg.real("tree", "T") == 0.5);
  CHECK(cfg.real("tree", "m", 3.0) == 3.0);
  CHECK(cfg.reals("kernel", "weights") == std::vector<double>{1.0, 0.5, 2.0});
  CHECK(cfg.str("kernel", "name") == "exp_sum");
  CHECK(cfg.where("tree", "T") == "a.ini:4");
  CHECK(cfg.canonical() == "kernel.name=exp_sum\nkernel.weights=1, 0.5 ,2\ntree.N=6\ntree.T=0.5\n");
  CHECK_THROWS_AS(cfg.real("kernel", "name"), ConfigError);
  CHECK_THROWS_AS(cfg.str("run", "out"), ConfigError);
}

TEST_CASE("rejected configs carry the offending line") {
  CHECK(error_of("[tree]\nN = 4\n[bogus]\n") == "t.ini:3: unknown section [bogus]");
  CHECK(error_of("[tree]\nN = 4\nsize = 2\n") == "t.ini:3: unknown key 'size' in [tree]");
  CHECK(error_of("[tree]\n\nN = four\n") == "t.ini:3: 'N' must be an integer, got 'four'");
  CHECK(error_of("[backward]\nproblem = linear\nmethod = newton\n") ==
        "t.ini:3: 'method' must be one of {fixed_point, block}, got 'newton'");
  CHECK(error_of("[forward]\nmethod = lattice\n") == "t.ini:1: missing required key 'problem' in [forward]");
  CHECK(error_of("[forward]\nproblem = caputo\nq = fast\n") == "t.ini:3: parameter 'q' must be a real number");
  CHECK(error_of("[tree]\nN 4\n") == "t.ini:2: expected 'key = value'");
  CHECK(error_of("N = 4\n") == "t.ini:1: key outside of any section");
  CHECK(error_of("[tree\n") == "t.ini:1: unterminated section header");
  CHECK(error_of("[tree]\nN = 4\nN = 5\n") == "t.ini:3: duplicate key 'N' in [tree]");
  CHECK(error_of("[tree]\n[tree]\n") == "t.ini:2: duplicate section [tree]");
  CHECK(error_of("[kernel]\nname = fractional\nweights = 1,,2\n") ==
        "t.ini:3: 'weights' must be a comma-separated list of reals, got '1,,2'");
  CHECK(error_of("[tree]\nT =\n") == "t.ini:2: empty value for 'T'");
  CHECK(error_of("[run]\nseed = 3\n[tree]\nN = 4\n[forward]\nproblem = caputo\nq = 0.5\n") == "");
  CHECK_THROWS_AS(Config::load("/nonexistent/x.ini"), ConfigError);
}

TEST_CASE("kernel specs build the named kernels") {
  auto build = [](const std::string& body) { return kernel_from_config(Config::parse("[kernel]\n" + body)); };
  CHECK(build("name = zero")(0.2, 0.5) == 0.0);
  CHECK(build("name = constant\nc = 2.5")(0.2, 0.5) == 2.5);
  CHECK(build("name = constant\norientation = causal")(0.5, 0.2) == 1.0);
  CHECK(build("name = fractional\nalpha = 0.25")(0.1, 0.5) == doctest::Approx(std::pow(0.4, -0.75)));
  CHECK(build("name = fractional\nalpha = 0.25\norientation = causal\nscale = 2")(0.5, 0.1) ==
        doctest::Approx(2 * std::pow(0.4, -0.75)));
  CHECK(build("name = doubly_singular\nalpha = 0.2\nbeta = 0.1")(0.25, 0.5) ==
        doctest::Approx(std::pow(0.25, -0.2) * std::pow(0.25, -0.1)));
  CHECK(build("name = counterexample_sup")(0.5, 0.7) == doctest::Approx(std::sqrt(2.0 / 0.5)));
  CHECK(build("name = reverse_sqrt\nT = 2")(0.5, 0.7) == doctest::Approx(1.0 / std::sqrt(2.0 - 0.2)));
  CHECK(build("name = exp_sum\nweights = 1, 2\nrates = 0, 1")(0.5, 0.25) ==
        doctest::Approx(1.0 + 2.0 * std::exp(-0.25)));
  CHECK(build("name = fbm_rl\nH = 0.7")(0.5, 0.25) == doctest::Approx(std::pow(0.25, 0.2) / std::tgamma(1.2)));
  CHECK(build("name = fbm_full\nH = 0.5")(0.7, 0.2) == 1.0);
  CHECK_THROWS_AS(build("name = fractional"), ConfigError);
  CHECK_THROWS_AS(build("name = fractional\nalpha = 0"), ConfigError);
}

TEST_CASE("tree and parameter extraction") {
  const Config cfg = Config::parse("[tree]\nN = 5\nT = 2\n[backward]\nproblem = linear\nc = 0.3\ntol = 1e-12\n");
  const Tree t = tree_from_config(cfg);
  CHECK(t.N == 5);
  CHECK(t.T == 2.0);
  const Params p = params_from_section(cfg, "backward", {"problem", "method", "tol"});
  CHECK(p.values() == std::map<std::string, double>{{"c", 0.3}});
  CHECK_THROWS_AS(tree_from_config(Config::parse("[tree]\nN = 40\n")), ConfigError);
  CHECK(tree_from_config(Config::parse(""), 7).N == 7);
}

TEST_CASE("property: random configs survive a text round trip with a stable hash") {
  std::mt19937_64 rng(17);
  const std::vector<std::string> pads = {"", " ", "\t", "  "};
  for (int trial = 0; trial < 200; ++trial) {
    std::map<std::string, std::map<std::string, std::string>> data;
    const int sections = 1 + static_cast<int>(rng() % 4);
    for (int s = 0; s < sections; ++s) {
      auto& sec = data["s" + std::to_string(rng() % 10)];
      const int keys = static_cast<int>(rng() % 5);
      for (int k = 0; k < keys; ++k) sec["k_" + std::to_string(rng() % 20)] = std::to_string(rng() % 1000) + ".5";
    }
    std::string text, expected;
    for (const auto& [name, sec] : data) {
      text += pads[rng() % 4] + "[" + name + "]" + (rng() % 2 ? "  # note" : "") + "\n";
      if (rng() % 2) text += "\n; blank\n";
      for (const auto& [key, value] : sec) {
        text += pads[rng() % 4] + key + pads[rng() % 4] + "=" + pads[rng() % 4] + value + pads[rng() % 4] + "\n";
        expected += name + "." + key + "=" + value + "\n";
      }
    }
    const Config cfg = Config::parse(text);
    CHECK(cfg.canonical() == expected);
    CHECK(config_hash(cfg) == config_hash(Config::parse(expected.empty() ? "" : text)));
    CHECK(config_hash(cfg).size() == 16);
  }
  const Config a = Config::parse("[tree]\nN = 4\n[run]\nseed = 1\n");
  const Config b = Config::parse("[run]\nseed = 1\n[tree]\nN = 4\n");
  Config c = a;
  c.set("run", "seed", "2");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a) != config_hash(c));
}

TEST_CASE("kernel report JSON carries the typed fields") {
  const KernelClassReport r = classify(make_counterexample_sup(), {1.0, 1.5});
  const nlohmann::json j = to_json(r);
  for (const char* key : {"l2_triangle_norm", "script_norm", "partition_results", "in_L2", "in_scriptL2", "in_K0",
                          "diagnostics"}) {
    CAPTURE(key);
    CHECK(j.contains(key));
  }
  CHECK(j["partition_results"].size() == 2);
  CHECK(j["partition_results"][0]["eps"] == 1.0);
  CHECK(j["partition_results"][0]["feasible"] == false);
  CHECK(j["partition_results"][1]["feasible"] == true);
  CHECK(j["script_norm"]["finite"] == true);
  CHECK(j.dump() == to_json(classify(make_counterexample_sup(), {1.0, 1.5})).dump());

  Measured inf;
  inf.finite = false;
  inf.value = std::numeric_limits<double>::infinity();
  CHECK(to_json(inf)["value"].is_null());
  CHECK(real_json(std::nan("")).is_null());
}

TEST_CASE("run report: pass flag, partial marker and CSV") {
  RunReport r;
  r.command = "kernel";
  r.check("a", true);
  CHECK(r.passed());
  r.partial = true;
  CHECK_FALSE(r.passed());
  r.partial = false;
  r.check("b", false);
  CHECK_FALSE(r.passed());
  const nlohmann::json j = to_json(r);
  CHECK(j["schema_version"] == kReportSchemaVersion);
  CHECK(j["passed"] == false);

  CsvTable t{{"a", "b"}, {}};
  t.add({1.0, 0.1});
  CHECK_THROWS_AS(t.add({1.0}), std::invalid_argument);
  std::ostringstream os;
  t.write(os);
  CHECK(os.str() == "a,b\n1,0.10000000000000001\n");

  AdaptedProcess p = AdaptedProcess::zeros(make_tree(1, 1.0), 1);
  p.at[1](0, 1) = 2.0;
  const CsvTable q = process_table(p);
  CHECK(q.rows.size() == 3);
  CHECK(q.rows.back() == std::vector<double>{1, 1, 0, 2});
}
