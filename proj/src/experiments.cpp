#include "kanvis/experiments.hpp"

#include "kanvis/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

namespace kanvis {
namespace fs = std::filesystem;

namespace {

CifarVariant parse_variant(const std::string& v) {
  return v == "cifar100" ? CifarVariant::cifar100 : CifarVariant::cifar10;
}

LabeledDataset test_subset(const LabeledDataset& test_full, double fraction) {
  if (fraction >= 1.0) return test_full;
  return balanced_subset(test_full, fraction, derive_seed(0, "data", "test"));
}

}  // namespace

PreparedData prepare_cifar(const LabeledDataset& train_full, const LabeledDataset& test_full, const RunConfig& cfg) {
  LabeledDataset train = prepare_training_split(train_full, cfg.train);
  LabeledDataset test = test_subset(test_full, cfg.data.test_fraction);
  if (cfg.data.standardize) {
    // Statistics from the clean training images; labels play no part.
    const auto stats = channel_stats(train);
    train = standardize(train, stats);
    test = standardize(test, stats);
  }
  return {Samples::from(train), Samples::from(test)};
}

PreparedData prepare_data(const RunConfig& cfg) {
  const auto& d = cfg.data;
  d.validate();
  if (d.task == "cifar") {
    if (!is_image_model(cfg.model.arch)) throw ConfigError("data.task", "cifar data needs an image model");
    const auto variant = parse_variant(d.variant);
    if (cfg.model.classes != cifar_class_count(variant)) {
      throw ConfigError("model.classes", "must equal the dataset's class count");
    }
    return prepare_cifar(load_cifar_split(d.dir, variant, Split::train), load_cifar_split(d.dir, variant, Split::test),
                         cfg);
  }
  if (d.task == "edge") {
    if (cfg.model.arch != Architecture::edge_kan && cfg.model.arch != Architecture::edge_linear) {
      throw ConfigError("data.task", "edge data needs edge_kan or edge_linear");
    }
    const auto side = d.edge_side == "left" ? EdgeSide::left : EdgeSide::right;
    const auto rule = d.edge_rule == "single_step" ? EdgeRule::single_step : EdgeRule::any_transition;
    return {Samples::from(edge_dataset(side, rule)), Samples{}};
  }
  if (cfg.model.arch != Architecture::ka_theorem || cfg.model.ka_dim != 1) {
    throw ConfigError("data.task", "regression data needs ka_theorem with ka_dim 1");
  }
  const auto seed = cfg.train.seed;
  return {Samples::from(synth_regression(d.function, d.n_train, d.x_min, d.x_max, d.noise_sd,
                                         derive_seed(seed, "data", "train"))),
          Samples::from(synth_regression(d.function, std::max<std::size_t>(d.n_test, 1), d.x_min, d.x_max, 0.0,
                                         derive_seed(seed, "data", "test")))};
}

Scale parse_scale(const std::string& name) {
  if (name == "desk") return Scale::desk;
  if (name == "paper") return Scale::paper;
  throw std::invalid_argument("unknown scale '" + name + "'");
}

std::string to_string(Scale scale) { return scale == Scale::desk ? "desk" : "paper"; }

ScaleSettings scale_settings(Scale scale) {
  if (scale == Scale::desk) return {0.1, 0.1, 15, 5, 128};
  return {1.0, 1.0, 50, 5, 128};
}

std::vector<std::string> preset_names() {
  return {"exp1", "exp2", "exp3", "exp4", "exp4_sens", "exp_edge", "reg_ablation"};
}

std::vector<std::uint64_t> default_seeds(const std::string& preset) {
  const std::size_t n = preset == "reg_ablation" ? 10 : 5;
  std::vector<std::uint64_t> seeds(n);
  for (std::size_t i = 0; i < n; ++i) seeds[i] = i + 1;
  return seeds;
}

namespace {

std::string num(double v) { return fmt::format("{:g}", v); }

const std::vector<Architecture>& table2_models() {
  static const std::vector<Architecture> models{Architecture::cnn_mlp, Architecture::ckan_cnn_mlp,
                                                Architecture::cnn_kan};
  return models;
}

RunConfig image_base(Scale scale, const DataConfig& data) {
  const auto s = scale_settings(scale);
  RunConfig c;
  c.data = data;
  c.data.task = "cifar";
  c.data.test_fraction = s.test_fraction;
  c.model.classes = cifar_class_count(parse_variant(data.variant));
  c.train.epochs = s.epochs;
  c.train.eval_every = s.eval_every;
  c.train.batch_size = s.batch_size;
  c.train.data_fraction = s.base_fraction;
  return c;
}

}  // namespace

std::vector<Cell> preset_grid(const std::string& preset, Scale scale, const DataConfig& data) {
  std::vector<Cell> grid;
  auto add = [&](std::string model, std::string sweep, RunConfig cfg) {
    grid.push_back({preset + "/" + sweep + "/" + model, std::move(model), std::move(sweep), std::move(cfg)});
  };
  const RunConfig base = image_base(scale, data);

  if (preset == "exp1") {
    for (double f : {0.2, 0.4, 0.6, 0.8, 1.0}) {
      for (auto arch : table2_models()) {
        RunConfig c = base;
        c.model.arch = arch;
        c.train.data_fraction = base.train.data_fraction * f;
        add(to_string(arch), num(f), c);
      }
    }
  } else if (preset == "exp2") {
    for (double eta : {0.1, 0.2, 0.3, 0.4, 0.5}) {
      for (auto arch : table2_models()) {
        RunConfig c = base;
        c.model.arch = arch;
        c.train.noise = eta;
        add(to_string(arch), num(eta), c);
      }
    }
  } else if (preset == "exp3") {
    for (const char* condition : {"noise30", "data60"}) {
      for (double l1 : {0.0, 1e-4, 1e-3, 1e-2}) {
        for (auto arch : table2_models()) {
          RunConfig c = base;
          c.model.arch = arch;
          c.train.lambda_l1 = l1;
          if (std::string(condition) == "noise30") {
            c.train.noise = 0.3;
          } else {
            c.train.data_fraction = base.train.data_fraction * 0.6;
          }
          add(to_string(arch), std::string(condition) + "/" + num(l1), c);
        }
      }
    }
  } else if (preset == "exp4") {
    struct Row {
      const char* label;
      Architecture arch;
      double lambda;
      double p;
    };
    for (const Row& r : {Row{"cnn_mlp", Architecture::cnn_mlp, 0.0, 0.0}, Row{"cnn_kan", Architecture::cnn_kan, 0.0, 0.0},
                         Row{"cnn_kan+smooth", Architecture::cnn_kan, 1e-3, 0.0},
                         Row{"cnn_kan+segdeact", Architecture::cnn_kan, 0.0, 0.1},
                         Row{"cnn_kan+both", Architecture::cnn_kan, 1e-3, 0.1}}) {
      RunConfig c = base;
      c.model.arch = r.arch;
      c.train.lambda_smooth = r.lambda;
      c.train.deactivation_p = r.p;
      add(r.label, "clean", c);
    }
  } else if (preset == "exp4_sens") {
    for (double p : {0.05, 0.1, 0.2, 0.3}) {
      RunConfig c = base;
      c.model.arch = Architecture::cnn_kan;
      c.train.deactivation_p = p;
      add("cnn_kan", "p=" + num(p), c);
    }
    for (double lambda : {1e-4, 1e-3, 1e-2}) {
      RunConfig c = base;
      c.model.arch = Architecture::cnn_kan;
      c.train.lambda_smooth = lambda;
      add("cnn_kan", "lambda=" + num(lambda), c);
    }
  } else if (preset == "exp_edge") {
    for (const char* side : {"left", "right"}) {
      for (auto arch : {Architecture::edge_kan, Architecture::edge_linear}) {
        RunConfig c;
        c.model.arch = arch;
        c.model.classes = 2;
        c.data.task = "edge";
        c.data.edge_side = side;
        c.train.epochs = 500;
        c.train.batch_size = 0;
        c.train.eval_every = 50;
        c.train.adam.lr = 1e-2;
        add(to_string(arch), side, c);
      }
    }
  } else if (preset == "reg_ablation") {
    struct Row {
      const char* label;
      double lambda;
      double p;
    };
    for (const Row& r : {Row{"kan", 0.0, 0.0}, Row{"kan+smooth", 1e-3, 0.0}, Row{"kan+segdeact", 0.0, 0.1},
                         Row{"kan+both", 1e-3, 0.1}}) {
      RunConfig c;
      c.model.arch = Architecture::ka_theorem;
      c.model.ka_dim = 1;
      c.model.classes = 1;
      c.data.task = "regression";
      c.model.domain_min = c.data.x_min;
      c.model.domain_max = c.data.x_max;
      c.train.epochs = 1500;
      c.train.batch_size = 0;
      c.train.eval_every = 500;
      c.train.adam.lr = 1e-2;
      c.train.lambda_smooth = r.lambda;
      c.train.deactivation_p = r.p;
      add(r.label, "sin", c);
    }
  } else {
    throw std::invalid_argument("unknown preset '" + preset + "'");
  }
  return grid;
}

const SummaryEntry& ExperimentResult::at(const std::string& sweep_value, const std::string& model) const {
  for (const auto& [sweep, models] : summary) {
    if (sweep != sweep_value) continue;
    for (const auto& [m, entry] : models) {
      if (m == model) return entry;
    }
  }
  throw std::out_of_range("no summary entry for " + sweep_value + "/" + model);
}

namespace {

struct Job {
  std::size_t cell;
  std::uint64_t seed;
};

std::string metric_for(const std::string& preset) {
  if (preset == "reg_ablation") return "test_mse";
  if (preset == "exp_edge") return "train_accuracy";
  return "test_accuracy";
}

double final_metric(const std::vector<ResultRow>& rows, const std::string& metric) {
  const std::string split = metric == "train_accuracy" ? "train" : "test";
  const ResultRow* last = nullptr;
  for (const auto& r : rows) {
    if (r.split == split && (!last || r.epoch >= last->epoch)) last = &r;
  }
  if (!last) throw std::logic_error("run produced no " + split + " evaluation");
  return metric == "test_mse" ? last->loss : last->accuracy;
}

}  // namespace

ExperimentResult run_experiment(const ExperimentOptions& options) {
  DataConfig data;
  data.dir = options.data_dir.string();
  data.variant = options.variant;
  auto grid = preset_grid(options.preset, options.scale, data);
  if (!options.sweep_values.empty()) {
    for (const auto& v : options.sweep_values) {
      if (std::none_of(grid.begin(), grid.end(), [&](const Cell& c) { return c.sweep_value == v; })) {
        throw std::invalid_argument("preset " + options.preset + " has no sweep value '" + v + "'");
      }
    }
    std::erase_if(grid, [&](const Cell& c) {
      return std::find(options.sweep_values.begin(), options.sweep_values.end(), c.sweep_value) ==
             options.sweep_values.end();
    });
  }
  const auto seeds = options.seeds.empty() ? default_seeds(options.preset) : options.seeds;
  for (auto& cell : grid) cell.config.output.wall_clock = cell.config.train.wall_clock = options.wall_clock;

  std::optional<LabeledDataset> cifar_train;
  std::optional<LabeledDataset> cifar_test;
  if (!grid.empty() && grid.front().config.data.task == "cifar") {
    const auto variant = parse_variant(options.variant);
    cifar_train = load_cifar_split(options.data_dir, variant, Split::train);
    cifar_test = load_cifar_split(options.data_dir, variant, Split::test);
  }

  std::vector<Job> jobs;
  for (std::size_t c = 0; c < grid.size(); ++c) {
    for (auto s : seeds) jobs.push_back({c, s});
  }
  std::vector<std::vector<ResultRow>> outputs(jobs.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= jobs.size()) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      try {
        const Cell& cell = grid[jobs[j].cell];
        RunConfig cfg = cell.config;
        cfg.train.seed = jobs[j].seed;
        const PreparedData d = cifar_train ? prepare_cifar(*cifar_train, *cifar_test, cfg) : prepare_data(cfg);
        Model model(cfg.model);
        const TrainResult tr = train(model, d.train, d.test, cfg.train);
        auto& rows = outputs[j];
        for (const auto& r : tr.records) {
          rows.push_back({options.preset, cell.name, cell.model, cell.sweep_value, cfg.train.seed, r.epoch, r.split,
                          r.loss, r.accuracy, r.wall_ms});
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::size_t workers = options.workers ? options.workers : std::max(1U, std::thread::hardware_concurrency());
  workers = std::min(workers, std::max<std::size_t>(jobs.size(), 1));
  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  ExperimentResult result;
  result.preset = options.preset;
  result.metric = metric_for(options.preset);
  for (auto& rows : outputs) result.rows.insert(result.rows.end(), rows.begin(), rows.end());

  for (std::size_t c = 0; c < grid.size(); ++c) {
    std::vector<double> values;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (jobs[j].cell == c) values.push_back(final_metric(outputs[j], result.metric));
    }
    SummaryEntry e;
    e.n_seeds = values.size();
    for (double v : values) e.mean += v / static_cast<double>(values.size());
    if (values.size() > 1) {
      double ss = 0.0;
      for (double v : values) ss += (v - e.mean) * (v - e.mean);
      e.sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    }
    const auto& cell = grid[c];
    auto it = std::find_if(result.summary.begin(), result.summary.end(),
                           [&](const auto& s) { return s.first == cell.sweep_value; });
    if (it == result.summary.end()) {
      result.summary.push_back({cell.sweep_value, {}});
      it = std::prev(result.summary.end());
    }
    it->second.emplace_back(cell.model, e);
  }

  Json cells = Json::array();
  for (const auto& cell : grid) {
    const Json resolved = to_json(cell.config);
    cells.push_back({{"cell", cell.name},
                     {"model", cell.model},
                     {"sweep_value", cell.sweep_value},
                     {"fingerprint", fingerprint(resolved)},
                     {"config", resolved}});
  }
  result.metadata = Json{{"version", kVersion},
                         {"preset", options.preset},
                         {"scale", to_string(options.scale)},
                         {"seeds", seeds},
                         {"data_dir", options.data_dir.string()},
                         {"variant", options.variant},
                         {"wall_clock", options.wall_clock},
                         {"sweep_values", options.sweep_values},
                         {"metric", result.metric},
                         {"notes",
                          {"label noise is applied to the training split only; test labels are clean",
                           "the seed is the config's train.seed; each cell reuses the same seed list"}},
                         {"cells", cells}};
  return result;
}

void write_csv(std::ostream& out, const ExperimentResult& result) {
  out << "preset,cell,model,sweep_value,seed,epoch,split,loss,accuracy,wall_ms\n";
  for (const auto& r : result.rows) {
    out << fmt::format("{},{},{},{},{},{},{},{:.17g},{:.17g},{:.3f}\n", r.preset, r.cell, r.model, r.sweep_value,
                       r.seed, r.epoch, r.split, r.loss, r.accuracy, r.wall_ms);
  }
}

Json summary_json(const ExperimentResult& result) {
  Json sweeps = Json::object();
  for (const auto& [sweep, models] : result.summary) {
    Json m = Json::object();
    for (const auto& [model, e] : models) m[model] = {{"mean", e.mean}, {"sd", e.sd}, {"n_seeds", e.n_seeds}};
    sweeps[sweep] = std::move(m);
  }
  return Json{{result.preset, std::move(sweeps)}};
}

void write_outputs(const fs::path& dir, const ExperimentResult& result) {
  fs::create_directories(dir);
  auto open = [&](const char* name) {
    std::ofstream out(dir / name);
    if (!out) throw IoError("cannot write " + (dir / name).string());
    return out;
  };
  {
    auto out = open("results.csv");
    write_csv(out, result);
  }
  open("summary.json") << summary_json(result).dump(2) << '\n';
  open("metadata.json") << result.metadata.dump(2) << '\n';
}

}  // namespace kanvis
