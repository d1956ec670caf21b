#include "kanvis/train.hpp"

#include "kanvis/errors.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

namespace kanvis {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (eval_every < 1) throw ConfigError("train.eval_every", "must be >= 1");
  if (!(adam.lr > 0.0)) throw ConfigError("train.lr", "must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) throw ConfigError("train.beta1", "must lie in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) throw ConfigError("train.beta2", "must lie in [0, 1)");
  if (!(adam.eps > 0.0)) throw ConfigError("train.eps", "must be positive");
  if (!(lambda_smooth >= 0.0)) throw ConfigError("train.lambda_smooth", "must be >= 0");
  if (!(lambda_l1 >= 0.0)) throw ConfigError("train.lambda_l1", "must be >= 0");
  if (!(deactivation_p >= 0.0 && deactivation_p <= 1.0)) throw ConfigError("train.deactivation_p", "must lie in [0, 1]");
  if (!(data_fraction > 0.0 && data_fraction <= 1.0)) throw ConfigError("train.data_fraction", "must lie in (0, 1]");
  if (!(noise >= 0.0 && noise <= 1.0)) throw ConfigError("train.noise", "must lie in [0, 1]");
}

Samples Samples::rows(std::span<const std::size_t> indices) const {
  auto take = [&](const Tensor& t) {
    Shape shape = t.shape();
    shape[0] = indices.size();
    Tensor out(shape);
    const std::size_t item = t.size() / t.dim(0);
    for (std::size_t r = 0; r < indices.size(); ++r) {
      std::copy_n(t.raw() + indices[r] * item, item, out.raw() + r * item);
    }
    return out;
  };
  Samples s;
  s.class_count = class_count;
  s.inputs = take(inputs);
  if (regression()) {
    s.targets = take(targets);
  } else {
    s.labels.reserve(indices.size());
    for (auto i : indices) s.labels.push_back(labels[i]);
  }
  return s;
}

Samples Samples::from(const LabeledDataset& ds) { return {ds.images, ds.labels, Tensor(), ds.class_count}; }

Samples Samples::from(const RegressionData& d) { return {d.x, {}, d.y, 0}; }

namespace {

LossResult data_loss(const Tensor& out, const Samples& batch) {
  return batch.regression() ? mse_loss(out, batch.targets) : softmax_cross_entropy(out, batch.labels);
}

}  // namespace

EvalResult evaluate(Model& model, const Samples& data, std::size_t batch_size) {
  const std::uint64_t draws = model.rng_draws();
  const std::size_t n = data.size();
  EvalResult r;
  if (n == 0) return r;
  batch_size = batch_size == 0 ? n : batch_size;
  double loss = 0.0;
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Samples batch = data.rows(idx);
    const Tensor out = model.forward(batch.inputs, Mode::inference);
    loss += data_loss(out, batch).loss * static_cast<double>(idx.size());
    if (!batch.regression()) {
      const auto pred = argmax_rows(out);
      for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.labels[i];
    }
  }
  if (model.rng_draws() != draws) throw std::logic_error("inference-mode evaluation consumed randomness");
  r.loss = loss / static_cast<double>(n);
  r.accuracy = data.regression() ? std::numeric_limits<double>::quiet_NaN()
                                 : static_cast<double>(correct) / static_cast<double>(n);
  return r;
}

TrainResult train(Model& model, const Samples& train_set, const Samples& test_set, const TrainConfig& cfg,
                  const StepObserver& observer) {
  cfg.validate();
  if (train_set.size() == 0) throw std::invalid_argument("training set is empty");
  using Clock = std::chrono::steady_clock;
  const auto start = Clock::now();
  auto elapsed_ms = [&] {
    if (!cfg.wall_clock) return 0.0;
    return std::chrono::duration<double, std::milli>(Clock::now() - start).count();
  };

  model.initialize(cfg.seed);
  model.set_deactivation_p(cfg.deactivation_p);
  TrainResult result;
  auto record = [&](int epoch) {
    for (const auto* split : {&train_set, &test_set}) {
      if (split->size() == 0) continue;
      const auto e = evaluate(model, *split);
      result.records.push_back({epoch, split == &train_set ? "train" : "test", e.loss, e.accuracy, elapsed_ms()});
    }
  };
  record(0);

  AdamState adam(cfg.adam);
  auto params = model.parameters();
  std::vector<Tensor*> values;
  std::vector<const Tensor*> grads;
  for (auto& p : params) {
    values.push_back(p.value);
    grads.push_back(p.grad);
  }

  Rng shuffle = derive_stream(cfg.seed, "train", "shuffle");
  const std::size_t n = train_set.size();
  const std::size_t batch_size = cfg.batch_size == 0 ? n : cfg.batch_size;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    shuffle.shuffle(std::span<std::size_t>(order));
    for (std::size_t s = 0; s < n; s += batch_size) {
      const std::span<const std::size_t> idx(order.data() + s, std::min(n, s + batch_size) - s);
      const Samples batch = train_set.rows(idx);
      model.zero_grad();
      const Tensor out = model.forward(batch.inputs, Mode::training);
      const LossResult loss = data_loss(out, batch);
      model.backward(loss.grad);
      const Regularization reg = model.regularize(cfg.lambda_smooth, cfg.lambda_l1, cfg.l1_splines_only);
      const StepLog log{++step, epoch, loss.loss, reg.smooth, reg.l1, loss.loss + reg.smooth + reg.l1};
      if (!std::isfinite(log.total)) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", step " << step << " (data " << log.data_loss << ", smooth "
            << log.smooth << ", l1 " << log.l1 << ")";
        throw DivergenceError(msg.str());
      }
      if (observer) observer(log, model);
      result.steps.push_back(log);
      adam.step(values, grads);
    }
    if (epoch % cfg.eval_every == 0 || epoch == cfg.epochs) record(epoch);
  }
  return result;
}

LabeledDataset prepare_training_split(const LabeledDataset& train, const TrainConfig& cfg) {
  LabeledDataset ds = cfg.data_fraction < 1.0
                          ? balanced_subset(train, cfg.data_fraction, derive_seed(cfg.seed, "data", "subset"))
                          : train;
  if (cfg.noise > 0.0) ds = inject_label_noise(ds, {cfg.noise, derive_seed(cfg.seed, "data", "noise")});
  return ds;
}

}  // namespace kanvis
