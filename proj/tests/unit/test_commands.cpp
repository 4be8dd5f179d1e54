#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "doctest.h"

#include "angdiff/commands.hpp"
#include "angdiff/io.hpp"

using namespace angdiff;
namespace fs = std::filesystem;

namespace {

std::map<std::string, std::string> read_dir(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::ifstream in(e.path(), std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    files[e.path().filename().string()] = ss.str();
  }
  return files;
}

nlohmann::json run(const std::string& command, std::vector<std::string> sets, const fs::path& out) {
  fs::remove_all(out);
  return run_command(make_config(command, std::nullopt, sets, 3, out.string()));
}

const std::map<std::string, std::vector<std::string>>& small_settings() {
  static const std::map<std::string, std::vector<std::string>> m{
      {"error-sweep", {"samples=2000", "t_stride=250"}},
      {"ddim-verify", {"samples=200", "steps=20"}},
      {"cfg-check", {"seeds=2", "steps=20"}},
      {"train-head",
       {"steps=60", "width=16", "depth=1", "batch=32", "log_every=20", "eval_samples=100", "eval_t_stride=250",
        "sample_count=1000", "sample_steps=10"}},
      {"train-argen",
       {"stage1_steps=6", "stage2_steps=6", "cond_width=16", "cond_layers=1", "cond_dim=16", "head_width=16",
        "head_depth=1", "batch_grids=4", "log_every=3"}},
  };
  return m;
}

}  // namespace

TEST_CASE("config rejects unknown keys and mistyped values") {
  auto cfg = make_config("cfg-check", std::nullopt, {}, std::nullopt, std::nullopt);
  CHECK_THROWS(cfg.set("omega=3"));
  CHECK_THROWS(cfg.set("seeds=abc"));
  CHECK_THROWS(cfg.set("report_bf16=3"));
  CHECK_THROWS(cfg.set("no_equals_sign"));
  CHECK_THROWS(cfg.merge({{"steps", {{"nested", 1}}}}, "test"));
  CHECK_NOTHROW(cfg.set("steps=50"));
  CHECK(cfg.get_int("steps") == 50);
  CHECK_THROWS(make_config("cfg-check", std::nullopt, {"typo_key=1"}, std::nullopt, std::nullopt));
  CHECK_THROWS(make_config("no-such-command", std::nullopt, {}, std::nullopt, std::nullopt));
  CHECK_THROWS(make_config("cfg-check", std::string("/nonexistent/config.json"), {}, std::nullopt, std::nullopt));
}

TEST_CASE("config file, sets and flags apply in order") {
  const fs::path p = "test_commands_config.json";
  write_text_file(p.string(), R"({"steps": 30, "seeds": 4, "seed": 9})");
  const auto cfg = make_config("cfg-check", p.string(), {"steps=40"}, 12, std::string("elsewhere"));
  fs::remove(p);
  CHECK(cfg.get_int("steps") == 40);
  CHECK(cfg.get_int("seeds") == 4);
  CHECK(cfg.get_seed() == 12);
  CHECK(cfg.get_string("out_dir") == "elsewhere");
  CHECK(cfg.get_doubles("omegas") == std::vector<double>{0, 1, 3, 10});
}

TEST_CASE("config hash ignores out_dir and tracks every other value") {
  const auto a = make_config("cfg-check", std::nullopt, {}, std::nullopt, std::string("a"));
  const auto b = make_config("cfg-check", std::nullopt, {}, std::nullopt, std::string("b"));
  const auto c = make_config("cfg-check", std::nullopt, {"steps=101"}, std::nullopt, std::string("a"));
  const auto d = make_config("ddim-verify", std::nullopt, {}, std::nullopt, std::string("a"));
  CHECK(a.hash() == b.hash());
  CHECK(a.hash() != c.hash());
  CHECK(a.hash() != d.hash());
  CHECK(a.hash().size() == 16);
  // FNV-1a 64 reference values.
  CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
  CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
  CHECK(a.echo().at("config_hash") == a.hash());
}

TEST_CASE("checkpoint round trip is float32-exact") {
  Rng rng(1);
  HeadConfig hc;
  hc.width = 8;
  hc.depth = 1;
  hc.steps = 10;
  auto hp = HeadParams::init(hc, rng);
  for (double& v : hp.data()) v += rng.normal();
  const std::string path = "test_commands_head.ckpt";
  write_checkpoint(path, head_checkpoint(hp, 7, {{"note", "x"}}));
  const auto ck = read_checkpoint(path);
  fs::remove(path);
  CHECK(ck.header.at("step") == 7);
  CHECK(ck.header.at("extra").at("note") == "x");
  const auto back = head_from_checkpoint(ck);
  CHECK(back.config().width == 8);
  for (std::size_t i = 0; i < hp.data().size(); ++i) CHECK(back.data()[i] == static_cast<float>(hp.data()[i]));
  CHECK_THROWS(argen_from_checkpoint(ck));
  CHECK_THROWS(read_checkpoint("/nonexistent.ckpt"));
}

TEST_CASE("every command writes a config echo and reruns byte-identically") {
  const fs::path base = "test_commands_out";
  for (const auto& [command, sets] : small_settings()) {
    CAPTURE(command);
    const auto s1 = run(command, sets, base / "a");
    const auto first = read_dir(base / "a");
    run(command, sets, base / "a");
    const auto second = read_dir(base / "a");
    CHECK(first == second);
    REQUIRE(first.count("config.json") == 1);
    const auto echo = nlohmann::json::parse(first.at("config.json"));
    CHECK(echo.at("command") == command);
    CHECK(echo.at("config_hash") == s1.at("config_hash"));
    for (const auto& [name, text] : first) {
      if (name.ends_with(".csv")) {
        CHECK(text.starts_with("# config_hash=" + s1.at("config_hash").get<std::string>() + "\n# command=" + command + "\n"));
      }
    }
  }

  // A different seed changes the stochastic outputs.
  const auto& sets = small_settings().at("cfg-check");
  fs::remove_all(base / "b");
  run_command(make_config("cfg-check", std::nullopt, sets, 4, (base / "b").string()));
  run("cfg-check", sets, base / "a");
  CHECK(read_dir(base / "a").at("cfg_check.csv") != read_dir(base / "b").at("cfg_check.csv"));
  fs::remove_all(base);
}

TEST_CASE("analytic reports carry suite, max_abs_err and pass") {
  const fs::path out = "test_commands_reports";
  for (const auto& [command, file] : {std::pair{"ddim-verify", "ddim_verify.json"}, {"cfg-check", "cfg_check.json"}}) {
    const auto summary = run(command, small_settings().at(command), out);
    CHECK(summary.at("pass") == true);
    const auto report = nlohmann::json::parse(read_text_file((out / file).string()));
    REQUIRE(!report.at("suites").empty());
    for (const auto& s : report.at("suites")) {
      CHECK(s.contains("suite"));
      CHECK(s.contains("max_abs_err"));
      CHECK(s.contains("pass"));
    }
  }
  fs::remove_all(out);
}

TEST_CASE("train-argen resumes and sample-eval reads its checkpoint") {
  const fs::path out = "test_commands_argen";
  auto sets = small_settings().at("train-argen");
  run("train-argen", sets, out / "train");
  REQUIRE(fs::exists(out / "train" / "stage1.ckpt"));
  REQUIRE(fs::exists(out / "train" / "final.ckpt"));

  auto resume_sets = sets;
  resume_sets.push_back("resume_from=" + (out / "train" / "stage1.ckpt").string());
  run("train-argen", resume_sets, out / "resume");
  const auto full = read_checkpoint((out / "train" / "final.ckpt").string());
  const auto resumed = read_checkpoint((out / "resume" / "final.ckpt").string());
  CHECK(resumed.header.at("step") == full.header.at("step"));

  const std::vector<std::string> eval{"checkpoint=" + (out / "train" / "final.ckpt").string(),
                                      "omegas=1,2",
                                      "eval_labels=0,1",
                                      "grids_per_label=63",
                                      "reference_grids=63",
                                      "sample_steps=5",
                                      "mmd_points=40"};
  const auto s1 = run("sample-eval", eval, out / "eval");
  const auto files = read_dir(out / "eval");
  CHECK(files.count("metrics.csv") == 1);
  CHECK(files.count("grids_omega_0.csv") == 1);
  CHECK(files.count("grids_omega_1.json") == 1);
  run("sample-eval", eval, out / "eval");
  CHECK(read_dir(out / "eval") == files);
  CHECK(s1.at("points").size() == 2);

  auto bad = eval;
  bad[0] = "checkpoint=";
  CHECK_THROWS(run("sample-eval", bad, out / "eval"));
  bad = eval;
  bad[3] = "grids_per_label=4";
  CHECK_THROWS(run("sample-eval", bad, out / "eval"));
  fs::remove_all(out);
}
