#include "kanvis/config.hpp"
#include "kanvis/errors.hpp"

#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace kanvis;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "kanvis_config_tests";
  fs::create_directories(dir);
  return dir / name;
}

struct CliResult {
  int code = -1;
  std::string output;
};

CliResult run_cli(const std::string& args) {
  const fs::path log = scratch("cli_output.txt");
  const std::string cmd = std::string(KANVIS_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string config_path_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const ConfigError& e) {
    return e.path();
  }
  return "";
}

}  // namespace

TEST(Config, DefaultsRoundTripThroughJson) {
  RunConfig cfg;
  cfg.model.arch = Architecture::cnn_kan;
  cfg.train.lambda_smooth = 1e-3;
  cfg.data.task = "edge";
  EXPECT_EQ(run_config_from_json(to_json(cfg)), cfg);
  EXPECT_EQ(model_spec_from_json(to_json(cfg.model)), cfg.model);
}

TEST(Config, PartialDocumentKeepsDefaults) {
  const auto cfg = run_config_from_json(Json::parse(R"({"train": {"epochs": 2}, "model": {"arch": "cnn_kan"}})"));
  EXPECT_EQ(cfg.train.epochs, 2);
  EXPECT_EQ(cfg.train.batch_size, 128u);
  EXPECT_EQ(cfg.model.arch, Architecture::cnn_kan);
}

TEST(Config, UnknownKeysAndBadTypesNameThePath) {
  EXPECT_EQ(config_path_of([] { run_config_from_json(Json::parse(R"({"train": {"epoch": 2}})")); }), "train.epoch");
  EXPECT_EQ(config_path_of([] { run_config_from_json(Json::parse(R"({"trian": {}})")); }), "trian");
  EXPECT_EQ(config_path_of([] { run_config_from_json(Json::parse(R"({"train": {"epochs": "many"}})")); }),
            "train.epochs");
  EXPECT_EQ(config_path_of([] { run_config_from_json(Json::parse(R"({"train": {"epochs": -1}})")); }),
            "train.epochs");
  EXPECT_EQ(config_path_of([] { run_config_from_json(Json::parse(R"({"model": {"arch": "vit"}})")); }), "model.arch");
}

TEST(Config, OverridesParseJsonOrString) {
  Json doc = to_json(RunConfig{});
  apply_override(doc, "train.epochs=7");
  apply_override(doc, "train.lr=0.5");
  apply_override(doc, "data.dir=/tmp/somewhere");
  apply_override(doc, "train.l1_splines_only=true");
  const auto cfg = run_config_from_json(doc);
  EXPECT_EQ(cfg.train.epochs, 7);
  EXPECT_EQ(cfg.train.adam.lr, 0.5);
  EXPECT_EQ(cfg.data.dir, "/tmp/somewhere");
  EXPECT_TRUE(cfg.train.l1_splines_only);
  EXPECT_THROW(apply_override(doc, "no_equals_sign"), ConfigError);
}

TEST(Config, FingerprintIsStableAndSensitive) {
  const Json a = to_json(RunConfig{});
  Json b = a;
  EXPECT_EQ(fingerprint(a), fingerprint(b));
  EXPECT_EQ(fingerprint(a).size(), 16u);
  apply_override(b, "train.seed=1");
  EXPECT_NE(fingerprint(a), fingerprint(b));
}

TEST(Config, MissingFileIsIoError) {
  EXPECT_THROW(load_run_config("/nonexistent/config.json"), IoError);
}

TEST(Cli, NegativeEpochsExitsWithConfigCode) {
  const fs::path file = scratch("cfg.json");
  std::ofstream(file) << R"({"data": {"task": "edge"}, "model": {"arch": "edge_kan", "classes": 2}})";
  const auto r = run_cli("train --config " + file.string() + " train.epochs=-1");
  EXPECT_EQ(r.code, 2) << r.output;
  EXPECT_NE(r.output.find("train.epochs"), std::string::npos) << r.output;
}

TEST(Cli, UnknownFlagExitsWithConfigCode) { EXPECT_EQ(run_cli("train --bogus").code, 2); }

TEST(Cli, MissingDataExitsWithIoCode) {
  EXPECT_EQ(run_cli("data verify /nonexistent/cifar").code, 3);
  EXPECT_EQ(run_cli("train --config /nonexistent/config.json").code, 3);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run_cli("gradcheck --model cnn_kan --mask all");
  EXPECT_EQ(r.code, 0) << r.output;
}

TEST(Cli, TrainWritesArtifacts) {
  const fs::path file = scratch("edge.json");
  const fs::path out = scratch("edge_run");
  fs::remove_all(out);
  std::ofstream(file) << R"({"data": {"task": "edge"}, "model": {"arch": "edge_kan", "classes": 2},
                            "train": {"epochs": 5, "batch_size": 0}})";
  const auto r = run_cli("train --config " + file.string() + " output.dir=" + out.string());
  ASSERT_EQ(r.code, 0) << r.output;
  for (const char* name : {"config.json", "checkpoint.bin", "checkpoint.bin.json", "results.csv", "metadata.json"}) {
    EXPECT_TRUE(fs::exists(out / name)) << name;
  }
}
