#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sys/wait.h>

#include "helpers.hpp"
#include "latentface/config.hpp"

using namespace lf;
using lftest::TempDir;
namespace fs = std::filesystem;

TEST_CASE("config parsing fills defaults and rejects unknown keys") {
  nlohmann::json j = nlohmann::json::object();
  auto cfg = config::config_from_json(j);
  CHECK(cfg.seed == 0);
  CHECK(cfg.threads == 1);
  CHECK(cfg.stage1.epochs == 30);
  CHECK(cfg.stage2.T == 1000);
  CHECK(cfg.probe.batch_size == 64);
  CHECK(cfg.synth.identities == 64);

  j = {{"seed", 9}, {"stage1", {{"epochs", 3}, {"disable_pose", true}}}};
  cfg = config::config_from_json(j);
  CHECK(cfg.seed == 9);
  CHECK(cfg.stage1.epochs == 3);
  CHECK(cfg.stage1.disable_pose);
  CHECK(cfg.stage1.batch_size == 16);  // untouched sections keep defaults
  CHECK(cfg.stage2.S == 5);

  nlohmann::json bad = {{"bogus", 1}};
  CHECK_THROWS_WITH_AS(config::config_from_json(bad), "unknown config key: config.bogus",
                       InvalidInputError);
  nlohmann::json nested = {{"stage2", {{"sampler", "ddim"}}}};
  CHECK_THROWS_WITH_AS(config::config_from_json(nested), "unknown config key: stage2.sampler",
                       InvalidInputError);
  nlohmann::json zero_threads = {{"threads", 0}};
  CHECK_THROWS_AS(config::config_from_json(zero_threads), InvalidInputError);
  nlohmann::json not_object = {{"paths", 4}};
  CHECK_THROWS_AS(config::config_from_json(not_object), InvalidInputError);
}

TEST_CASE("config json round trips and resolves to disk") {
  nlohmann::json j = {{"seed", 123},
                      {"paths", {{"corpus", "/tmp/c"}, {"out", "/tmp/o"}}},
                      {"stage1", {{"learning_rate", 0.0005}, {"lambda_flip", 0.25}}},
                      {"stage2", {{"T", 250}, {"S", 10}}},
                      {"probe", {{"epochs", 7}}},
                      {"synth", {{"identities", 12}, {"frames", 3}}}};
  auto cfg = config::config_from_json(j);
  auto full = config::config_to_json(cfg);
  auto cfg2 = config::config_from_json(full);
  CHECK(config::config_to_json(cfg2) == full);

  TempDir tmp;
  std::string out = tmp / "run";
  config::write_resolved(cfg, out);
  auto back = config::load_config(out + "/resolved_config.json");
  CHECK(config::config_to_json(back) == full);

  std::ofstream(tmp / "broken.json") << "{ not json";
  CHECK_THROWS_AS(config::load_config(tmp / "broken.json"), InvalidInputError);
  CHECK_THROWS_AS(config::load_config(tmp / "absent.json"), IoError);
}

namespace {

int run_cli(const std::string& args) {
  std::string cmd = std::string(LATENTFACE_BIN) + " " + args + " > /dev/null 2>&1";
  int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("cli rejects bad invocations and reports usage errors as exit 1") {
  CHECK(run_cli("") == 1);
  CHECK(run_cli("--frobnicate") == 1);
  CHECK(run_cli("synth") == 1);  // no output directory anywhere
}

TEST_CASE("cli synth writes a complete corpus tree") {
  TempDir tmp;
  std::string root = tmp / "corpus";
  int rc = run_cli("synth --out " + root +
                   " --seed 5 --identities 5 --frames 2 --pos-pairs 5 --neg-pairs 5");
  CHECK(rc == 0);
  CHECK(fs::exists(root + "/labels.csv"));
  CHECK(fs::exists(root + "/pairs.csv"));
  CHECK(fs::exists(root + "/manifest.json"));
  CHECK(fs::exists(root + "/resolved_config.json"));
  CHECK(fs::is_directory(root + "/train"));
  CHECK(fs::is_directory(root + "/eval"));
  CHECK(fs::exists(root + "/train/id0000/f00.png"));
}

TEST_CASE("cli train stage 2 demands a stage-1 checkpoint") {
  TempDir tmp;
  std::string root = tmp / "corpus";
  REQUIRE(run_cli("synth --out " + root + " --seed 5 --identities 5 --frames 2") == 0);
  int rc = run_cli("train --stage 2 --corpus " + root + " --out " + (tmp / "out"));
  CHECK(rc == 1);
}

TEST_CASE("cli render distinguishes missing files from usage errors") {
  TempDir tmp;
  int rc = run_cli("render --ckpt " + (tmp / "no_such.lfck") + " --image " + (tmp / "x.png") +
                   " --out " + (tmp / "out"));
  CHECK(rc == 2);
}

TEST_CASE("cli invariant checks pass") { CHECK(run_cli("check --suite invariants") == 0); }
