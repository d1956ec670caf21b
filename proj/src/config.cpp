#include "kanvis/config.hpp"

#include "kanvis/errors.hpp"
#include "kanvis/rng.hpp"

#include <fmt/format.h>

#include <fstream>

namespace kanvis {

void DataConfig::validate() const {
  if (task != "cifar" && task != "edge" && task != "regression") {
    throw ConfigError("data.task", "expected cifar, edge or regression, got '" + task + "'");
  }
  if (variant != "cifar10" && variant != "cifar100") throw ConfigError("data.variant", "expected cifar10 or cifar100");
  if (!(test_fraction > 0.0 && test_fraction <= 1.0)) throw ConfigError("data.test_fraction", "must lie in (0, 1]");
  if (edge_side != "left" && edge_side != "right") throw ConfigError("data.edge_side", "expected left or right");
  if (edge_rule != "single_step" && edge_rule != "any_transition") {
    throw ConfigError("data.edge_rule", "expected single_step or any_transition");
  }
  if (function != "sin" && function != "square") throw ConfigError("data.function", "expected sin or square");
  if (n_train == 0) throw ConfigError("data.n_train", "must be positive");
  if (!(noise_sd >= 0.0)) throw ConfigError("data.noise_sd", "must be >= 0");
  if (!(x_min < x_max)) throw ConfigError("data.x_min", "must be below data.x_max");
}

Json to_json(const ModelSpec& s) {
  return Json{{"arch", to_string(s.arch)},
              {"in_channels", s.in_channels},
              {"height", s.height},
              {"width", s.width},
              {"classes", s.classes},
              {"conv1_channels", s.conv1_channels},
              {"conv2_channels", s.conv2_channels},
              {"kernel", s.kernel},
              {"hidden", s.hidden},
              {"grid", s.grid},
              {"order", s.order},
              {"domain_min", s.domain_min},
              {"domain_max", s.domain_max},
              {"ckan_functions", s.ckan_functions},
              {"ckan_silu", s.ckan_silu},
              {"ka_dim", s.ka_dim}};
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"lr", c.adam.lr},
              {"beta1", c.adam.beta1},
              {"beta2", c.adam.beta2},
              {"eps", c.adam.eps},
              {"lambda_smooth", c.lambda_smooth},
              {"lambda_l1", c.lambda_l1},
              {"l1_splines_only", c.l1_splines_only},
              {"deactivation_p", c.deactivation_p},
              {"data_fraction", c.data_fraction},
              {"noise", c.noise},
              {"eval_every", c.eval_every}};
}

Json to_json(const DataConfig& d) {
  return Json{{"task", d.task},         {"dir", d.dir},         {"variant", d.variant},
              {"standardize", d.standardize}, {"test_fraction", d.test_fraction}, {"edge_side", d.edge_side},
              {"edge_rule", d.edge_rule}, {"function", d.function}, {"n_train", d.n_train},
              {"n_test", d.n_test},     {"noise_sd", d.noise_sd}, {"x_min", d.x_min},
              {"x_max", d.x_max}};
}

Json to_json(const OutputConfig& o) { return Json{{"dir", o.dir}, {"wall_clock", o.wall_clock}}; }

Json to_json(const RunConfig& c) {
  return Json{{"model", to_json(c.model)}, {"train", to_json(c.train)}, {"data", to_json(c.data)},
              {"output", to_json(c.output)}};
}

namespace {

const char* type_label(const Json& j) {
  if (j.is_boolean()) return "a boolean";
  if (j.is_number_integer()) return "an integer";
  if (j.is_number()) return "a number";
  if (j.is_string()) return "a string";
  if (j.is_object()) return "an object";
  return "a value";
}

/// Overlays `user` onto `defaults`, rejecting unknown keys and type changes.
void merge_strict(Json& defaults, const Json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError(prefix.empty() ? "<root>" : prefix, "expected an object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!defaults.contains(it.key())) throw ConfigError(path, "unknown key");
    Json& slot = defaults[it.key()];
    const Json& v = it.value();
    if (slot.is_object()) {
      merge_strict(slot, v, path);
      continue;
    }
    bool ok = false;
    if (slot.is_boolean()) {
      ok = v.is_boolean();
    } else if (slot.is_number_integer()) {
      ok = v.is_number_integer();
    } else if (slot.is_number()) {
      ok = v.is_number();
    } else if (slot.is_string()) {
      ok = v.is_string();
    }
    if (!ok) throw ConfigError(path, std::string("expected ") + type_label(slot) + ", got " + type_label(v));
    slot = v;
  }
}

std::size_t get_size(const Json& obj, const char* key, const std::string& prefix) {
  const Json& v = obj.at(key);
  if (v.is_number_integer() && v.get<std::int64_t>() < 0) {
    throw ConfigError(prefix + "." + key, "must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

ModelSpec parse_model(const Json& m) {
  ModelSpec s;
  try {
    s.arch = parse_architecture(m.at("arch").get<std::string>());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model.arch", e.what());
  }
  s.in_channels = get_size(m, "in_channels", "model");
  s.height = get_size(m, "height", "model");
  s.width = get_size(m, "width", "model");
  s.classes = get_size(m, "classes", "model");
  s.conv1_channels = get_size(m, "conv1_channels", "model");
  s.conv2_channels = get_size(m, "conv2_channels", "model");
  s.kernel = get_size(m, "kernel", "model");
  s.hidden = get_size(m, "hidden", "model");
  s.grid = get_size(m, "grid", "model");
  s.order = get_size(m, "order", "model");
  s.domain_min = m.at("domain_min").get<double>();
  s.domain_max = m.at("domain_max").get<double>();
  s.ckan_functions = get_size(m, "ckan_functions", "model");
  s.ckan_silu = m.at("ckan_silu").get<bool>();
  s.ka_dim = get_size(m, "ka_dim", "model");
  s.validate();
  return s;
}

TrainConfig parse_train(const Json& t) {
  TrainConfig c;
  const Json& epochs = t.at("epochs");
  if (epochs.get<std::int64_t>() < 0) throw ConfigError("train.epochs", "must be >= 0");
  c.epochs = epochs.get<int>();
  c.batch_size = get_size(t, "batch_size", "train");
  c.seed = get_size(t, "seed", "train");
  c.adam.lr = t.at("lr").get<double>();
  c.adam.beta1 = t.at("beta1").get<double>();
  c.adam.beta2 = t.at("beta2").get<double>();
  c.adam.eps = t.at("eps").get<double>();
  c.lambda_smooth = t.at("lambda_smooth").get<double>();
  c.lambda_l1 = t.at("lambda_l1").get<double>();
  c.l1_splines_only = t.at("l1_splines_only").get<bool>();
  c.deactivation_p = t.at("deactivation_p").get<double>();
  c.data_fraction = t.at("data_fraction").get<double>();
  c.noise = t.at("noise").get<double>();
  c.eval_every = t.at("eval_every").get<int>();
  c.validate();
  return c;
}

DataConfig parse_data(const Json& d) {
  DataConfig c;
  c.task = d.at("task").get<std::string>();
  c.dir = d.at("dir").get<std::string>();
  c.variant = d.at("variant").get<std::string>();
  c.standardize = d.at("standardize").get<bool>();
  c.test_fraction = d.at("test_fraction").get<double>();
  c.edge_side = d.at("edge_side").get<std::string>();
  c.edge_rule = d.at("edge_rule").get<std::string>();
  c.function = d.at("function").get<std::string>();
  c.n_train = get_size(d, "n_train", "data");
  c.n_test = get_size(d, "n_test", "data");
  c.noise_sd = d.at("noise_sd").get<double>();
  c.x_min = d.at("x_min").get<double>();
  c.x_max = d.at("x_max").get<double>();
  c.validate();
  return c;
}

}  // namespace

ModelSpec model_spec_from_json(const Json& doc) {
  Json merged = to_json(ModelSpec{});
  merge_strict(merged, doc, "model");
  return parse_model(merged);
}

RunConfig run_config_from_json(const Json& doc) {
  Json merged = to_json(RunConfig{});
  merge_strict(merged, doc, "");
  RunConfig c;
  c.model = parse_model(merged.at("model"));
  c.train = parse_train(merged.at("train"));
  c.data = parse_data(merged.at("data"));
  c.output.dir = merged.at("output").at("dir").get<std::string>();
  c.output.wall_clock = merged.at("output").at("wall_clock").get<bool>();
  c.train.wall_clock = c.output.wall_clock;
  return c;
}

void apply_override(Json& doc, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos || eq == 0) {
    throw ConfigError(std::string(assignment), "override must look like section.key=value");
  }
  const std::string path(assignment.substr(0, eq));
  const std::string text(assignment.substr(eq + 1));
  Json value = Json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;

  Json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError(path, "empty path component");
    if (!node->is_object()) throw ConfigError(path, "does not name a config field");
    if (dot == std::string::npos) {
      (*node)[key] = std::move(value);
      return;
    }
    node = &(*node)[key];
    if (node->is_null()) *node = Json::object();
    start = dot + 1;
  }
}

RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot read config " + file.string());
  Json doc = Json::parse(in, nullptr, false);
  if (doc.is_discarded()) throw ConfigError("<root>", "not valid JSON: " + file.string());
  for (const auto& o : overrides) apply_override(doc, o);
  return run_config_from_json(doc);
}

std::string fingerprint(const Json& doc) { return fmt::format("{:016x}", fnv1a(doc.dump())); }

}  // namespace kanvis
