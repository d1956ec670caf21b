// kanvis command-line entry point. Exit codes: 0 success, 1 unexpected
// failure, 2 invalid configuration or usage, 3 missing/unreadable files,
// 4 numerical failure (divergence, gradient check).

#include "kanvis/checkpoint.hpp"
#include "kanvis/config.hpp"
#include "kanvis/errors.hpp"
#include "kanvis/experiments.hpp"
#include "kanvis/gradcheck.hpp"

#include <CLI11.hpp>
#include <fmt/format.h>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

namespace fs = std::filesystem;
using namespace kanvis;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size()) throw ConfigError("--seeds", "not an unsigned integer: '" + item + "'");
    seeds.push_back(v);
  }
  if (seeds.empty()) throw ConfigError("--seeds", "needs at least one seed");
  return seeds;
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

CifarVariant variant_of(const std::string& v) {
  if (v == "cifar10") return CifarVariant::cifar10;
  if (v == "cifar100") return CifarVariant::cifar100;
  throw ConfigError("--variant", "expected cifar10 or cifar100");
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

int cmd_verify(const std::string& dir, const std::string& variant) {
  if (!fs::is_directory(dir)) throw IoError("no such directory: " + dir);
  const auto report = verify_cifar(dir, variant_of(variant));
  Json out{{"ok", report.ok},
           {"train_records", report.train_records},
           {"test_records", report.test_records},
           {"train_histogram", report.train_histogram},
           {"test_histogram", report.test_histogram},
           {"problems", report.problems}};
  std::cout << out.dump(2) << '\n';
  return report.ok ? 0 : kExitIo;
}

int cmd_synth(const std::string& dir, const SyntheticCifarSpec& spec) {
  write_synthetic_cifar(dir, spec);
  std::cout << fmt::format("wrote {} train and {} test records to {}\n", spec.train_per_class * spec.classes,
                           spec.test_per_class * spec.classes, dir);
  return 0;
}

int cmd_train(const std::string& config_file, const std::vector<std::string>& overrides) {
  const RunConfig cfg = load_run_config(config_file, overrides);
  const fs::path out = cfg.output.dir;
  fs::create_directories(out);
  const Json resolved = to_json(cfg);
  write_file(out / "config.json", resolved.dump(2) + "\n");

  const PreparedData data = prepare_data(cfg);
  Model model(cfg.model);
  const TrainResult result = train(model, data.train, data.test, cfg.train);
  save_checkpoint(model, out / "checkpoint.bin");

  ExperimentResult table;
  table.preset = "train";
  const std::string cell = fingerprint(resolved);
  for (const auto& r : result.records) {
    table.rows.push_back({"train", cell, to_string(cfg.model.arch), "", cfg.train.seed, r.epoch, r.split, r.loss,
                          r.accuracy, r.wall_ms});
  }
  std::ofstream csv(out / "results.csv");
  if (!csv) throw IoError("cannot write " + (out / "results.csv").string());
  write_csv(csv, table);
  const Json meta{{"version", kVersion},
                  {"fingerprint", cell},
                  {"config", resolved},
                  {"notes", {"label noise is applied to the training split only; test labels are clean"}}};
  write_file(out / "metadata.json", meta.dump(2) + "\n");

  const auto& last = result.records.back();
  std::cout << fmt::format("epoch {} {} loss {:.6f} accuracy {:.4f}; outputs in {}\n", last.epoch, last.split,
                           last.loss, last.accuracy, out.string());
  return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data_dir, const std::string& variant,
             const std::string& split) {
  Model model = load_checkpoint(checkpoint);
  if (!is_image_model(model.spec().arch)) {
    throw ConfigError("--checkpoint", "eval reads CIFAR data; this checkpoint holds a " + to_string(model.spec().arch));
  }
  if (split != "train" && split != "test") throw ConfigError("--split", "expected train or test");
  const auto ds = load_cifar_split(data_dir, variant_of(variant), split == "train" ? Split::train : Split::test);
  if (ds.class_count != model.spec().classes) throw ConfigError("--variant", "class count differs from the model");
  const auto r = evaluate(model, Samples::from(ds));
  const Json out{{"checkpoint", checkpoint}, {"split", split}, {"n", ds.size()}, {"loss", r.loss}, {"accuracy", r.accuracy}};
  std::cout << out.dump(2) << '\n';
  return 0;
}

int cmd_gradcheck(const std::string& tag, const std::string& mask, double tolerance) {
  Architecture arch;
  try {
    arch = parse_architecture(tag);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--model", e.what());
  }
  GradcheckOptions opt;
  opt.tolerance = tolerance;
  if (mask == "none") {
    opt.all_deactivated = false;
  } else if (mask == "all") {
    opt.all_deactivated = true;
  } else {
    throw ConfigError("--mask", "expected none or all");
  }
  const auto report = gradcheck(tiny_spec(arch), opt);
  Json groups = Json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"name", g.name}, {"size", g.size}, {"max_rel_error", g.max_rel_error}});
  }
  const Json out{{"model", report.model}, {"mask", mask}, {"tolerance", tolerance}, {"passed", report.passed()},
                 {"groups", groups}};
  std::cout << out.dump(2) << '\n';
  return report.passed() ? 0 : kExitNumeric;
}

int cmd_experiment(ExperimentOptions opt, const std::string& scale, const std::string& seeds,
                   const std::string& sweep, const std::string& out) {
  try {
    opt.scale = parse_scale(scale);
  } catch (const std::invalid_argument& e) {
    throw ConfigError("--scale", e.what());
  }
  const auto names = preset_names();
  if (std::find(names.begin(), names.end(), opt.preset) == names.end()) {
    throw ConfigError("--preset", "unknown preset '" + opt.preset + "'");
  }
  if (!seeds.empty()) opt.seeds = parse_seeds(seeds);
  opt.sweep_values = split_list(sweep);
  variant_of(opt.variant);
  const auto result = run_experiment(opt);
  write_outputs(out, result);
  std::cout << summary_json(result).dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
#ifdef __GLIBC__
  // Keep large activation buffers on the heap between steps instead of
  // mapping fresh pages every time.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  CLI::App app{"Kolmogorov-Arnold network experiments on CIFAR-style image data"};
  app.require_subcommand(1);

  auto* data = app.add_subcommand("data", "dataset utilities");
  data->require_subcommand(1);
  std::string dir;
  std::string variant = "cifar10";
  auto* verify = data->add_subcommand("verify", "check CIFAR binary files and label histograms");
  verify->add_option("dir", dir, "dataset directory")->required();
  verify->add_option("--variant", variant, "cifar10 or cifar100");
  SyntheticCifarSpec synth_spec;
  auto* synth = data->add_subcommand("synth", "write a synthetic dataset in CIFAR-10 binary layout");
  synth->add_option("dir", dir, "output directory")->required();
  synth->add_option("--train-per-class", synth_spec.train_per_class);
  synth->add_option("--test-per-class", synth_spec.test_per_class);
  synth->add_option("--pixel-noise", synth_spec.pixel_noise);
  synth->add_option("--seed", synth_spec.seed);

  auto* train_cmd = app.add_subcommand("train", "train one model from a JSON config");
  std::string config_file;
  std::vector<std::string> overrides;
  train_cmd->add_option("--config", config_file, "JSON config file")->required();
  train_cmd->add_option("overrides", overrides, "dotted overrides such as train.epochs=5");

  auto* eval_cmd = app.add_subcommand("eval", "inference-mode accuracy of a checkpoint");
  std::string checkpoint;
  std::string split = "test";
  eval_cmd->add_option("--checkpoint", checkpoint)->required();
  eval_cmd->add_option("--data", dir, "CIFAR directory")->required();
  eval_cmd->add_option("--variant", variant);
  eval_cmd->add_option("--split", split, "train or test");

  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of a tiny model");
  std::string model_tag;
  std::string mask = "none";
  double tolerance = 1e-5;
  grad_cmd->add_option("--model", model_tag)->required();
  grad_cmd->add_option("--mask", mask, "none or all (pinned deactivation mask)");
  grad_cmd->add_option("--tolerance", tolerance);

  auto* exp_cmd = app.add_subcommand("experiment", "run a preset grid over seeds");
  ExperimentOptions exp;
  std::string scale = "desk";
  std::string seeds;
  std::string sweep;
  std::string out = "runs/experiment";
  bool no_wall_clock = false;
  exp_cmd->add_option("--preset", exp.preset, fmt::format("one of {}", fmt::join(preset_names(), ", ")))->required();
  exp_cmd->add_option("--scale", scale, "desk or paper");
  exp_cmd->add_option("--seeds", seeds, "comma-separated seeds");
  exp_cmd->add_option("--data", exp.data_dir, "CIFAR directory (image presets)");
  exp_cmd->add_option("--variant", exp.variant);
  exp_cmd->add_option("--out", out, "output directory");
  exp_cmd->add_option("--workers", exp.workers, "worker threads (0: all cores)");
  exp_cmd->add_option("--sweep", sweep, "comma-separated subset of sweep values");
  exp_cmd->add_flag("--no-wall-clock", no_wall_clock, "record wall_ms as 0 for byte-identical reruns");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (verify->parsed()) return cmd_verify(dir, variant);
    if (synth->parsed()) return cmd_synth(dir, synth_spec);
    if (train_cmd->parsed()) return cmd_train(config_file, overrides);
    if (eval_cmd->parsed()) return cmd_eval(checkpoint, dir, variant, split);
    if (grad_cmd->parsed()) return cmd_gradcheck(model_tag, mask, tolerance);
    if (exp_cmd->parsed()) {
      exp.wall_clock = !no_wall_clock;
      return cmd_experiment(exp, scale, seeds, sweep, out);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << '\n';
    return kExitIo;
  } catch (const DivergenceError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::invalid_argument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}
