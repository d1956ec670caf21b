#include "kanvis/errors.hpp"
#include "kanvis/gradcheck.hpp"
#include "kanvis/model.hpp"
#include "kanvis/train.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace kanvis;

namespace {

const Architecture kAll[] = {Architecture::cnn_mlp,  Architecture::ckan_cnn_mlp, Architecture::cnn_kan,
                             Architecture::edge_kan, Architecture::edge_linear,  Architecture::ka_theorem};

Samples tiny_samples(const ModelSpec& spec, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Shape shape{n};
  for (auto d : spec.input_shape()) shape.push_back(d);
  Samples s;
  s.inputs = oracle::random_tensor(shape, rng, 0.0, 1.0);
  if (is_regression(spec.arch)) {
    s.targets = oracle::random_tensor({n, 1}, rng);
  } else {
    s.class_count = spec.classes;
    for (std::size_t i = 0; i < n; ++i) s.labels.push_back(int(rng.below(spec.classes)));
  }
  return s;
}

std::vector<Tensor> snapshot(Model& m) {
  std::vector<Tensor> out;
  for (auto& p : m.parameters()) out.push_back(*p.value);
  return out;
}

TrainConfig quick_config() {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.seed = 11;
  cfg.adam.lr = 1e-2;
  return cfg;
}

}  // namespace

TEST(Model, ArchitectureTagsRoundTrip) {
  for (auto a : kAll) EXPECT_EQ(parse_architecture(to_string(a)), a);
  EXPECT_THROW(parse_architecture("resnet"), std::invalid_argument);
}

TEST(Model, FullSizeOutputShapes) {
  for (auto a : {Architecture::cnn_mlp, Architecture::ckan_cnn_mlp, Architecture::cnn_kan}) {
    ModelSpec spec;
    spec.arch = a;
    Model m(spec);
    m.initialize(1);
    Rng rng(2);
    const Tensor x = oracle::random_tensor({2, 3, 32, 32}, rng, 0, 1);
    EXPECT_EQ(m.forward(x, Mode::inference).shape(), (Shape{2, 10})) << to_string(a);
  }
}

TEST(Model, CkanSwapsOnlyTheFirstStage) {
  ModelSpec spec;
  spec.arch = Architecture::ckan_cnn_mlp;
  Model m(spec);
  std::vector<std::string> names;
  for (auto& mod : m.modules()) names.push_back(mod->name());
  EXPECT_EQ(names.front(), "ckan1");
  EXPECT_EQ(std::count(names.begin(), names.end(), "conv2"), 1);
  EXPECT_EQ(std::count(names.begin(), names.end(), "conv1"), 0);
}

TEST(Model, KanHeadParameterCount) {
  ModelSpec mlp, kan;
  kan.arch = Architecture::cnn_kan;
  Model a(mlp), b(kan);
  // Same trunk; the heads differ by d_in * d_out * (n_basis + 2) vs d_in * d_out + d_out.
  std::size_t flat = 0;
  for (auto& p : a.parameters()) {
    if (p.name == "fc.W") flat = p.value->dim(0);
  }
  ASSERT_GT(flat, 0u);
  EXPECT_EQ(b.parameter_count() - a.parameter_count(), flat * 10 * (8 + 2) - (flat * 10 + 10));
}

TEST(Model, EdgeModelsAreSingleLayers) {
  Model kan(tiny_spec(Architecture::edge_kan));
  Model lin(tiny_spec(Architecture::edge_linear));
  EXPECT_EQ(kan.parameter_count(), 4u * 2u * 10u);
  EXPECT_EQ(lin.parameter_count(), 8u);
}

TEST(Model, InvalidSpecNamesField) {
  ModelSpec spec;
  spec.grid = 0;
  try {
    spec.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "model.grid");
  }
}

class ModelGradcheck : public ::testing::TestWithParam<std::tuple<Architecture, bool>> {};

TEST_P(ModelGradcheck, AnalyticMatchesFiniteDifferences) {
  const auto [arch, deactivated] = GetParam();
  GradcheckOptions opt;
  opt.all_deactivated = deactivated;
  opt.lambda_smooth = 1e-2;
  const auto report = gradcheck(tiny_spec(arch), opt);
  for (const auto& g : report.groups) EXPECT_LT(g.max_rel_error, 1e-5) << g.name;
  EXPECT_TRUE(report.passed());
  EXPECT_GT(report.groups.size(), 1u);
}

INSTANTIATE_TEST_SUITE_P(AllModels, ModelGradcheck, ::testing::Combine(::testing::ValuesIn(kAll), ::testing::Bool()),
                         [](const auto& info) {
                           return to_string(std::get<0>(info.param)) +
                                  (std::get<1>(info.param) ? "_deactivated" : "_active");
                         });

TEST(Gradcheck, RelativeErrorUsesFloor) {
  const double a[] = {1.0, 0.0, 2e-6};
  const double n[] = {1.0 + 1e-9, 1e-9, 1e-6};
  EXPECT_NEAR(max_relative_error(a, n, 1e-4), 1e-2, 1e-12);
}

TEST(Train, ZeroEpochsLeavesInitialization) {
  const auto spec = tiny_spec(Architecture::cnn_kan);
  const auto data = tiny_samples(spec, 8, 1);
  auto cfg = quick_config();
  cfg.epochs = 0;
  Model trained(spec), fresh(spec);
  const auto result = train(trained, data, data, cfg);
  fresh.initialize(cfg.seed);
  EXPECT_EQ(snapshot(trained), snapshot(fresh));
  ASSERT_EQ(result.records.size(), 2u);
  EXPECT_EQ(result.records[0].epoch, 0);
  EXPECT_TRUE(result.steps.empty());
}

TEST(Train, StepAccountingMatchesIndependentPenalties) {
  const auto spec = tiny_spec(Architecture::cnn_kan);
  const auto data = tiny_samples(spec, 8, 2);
  auto cfg = quick_config();
  cfg.lambda_smooth = 0.05;
  cfg.lambda_l1 = 1e-3;
  const SmoothnessGram gram(spec.basis());
  std::size_t seen = 0;
  Model model(spec);
  train(model, data, data, cfg, [&](const StepLog& log, Model& m) {
    double smooth = 0.0, l1 = 0.0;
    for (auto& p : m.parameters()) {
      for (double v : p.value->data()) l1 += std::abs(v);
      if (!p.gram) continue;
      const std::size_t nb = gram.size();
      for (std::size_t r = 0; r < p.value->size() / nb; ++r) {
        smooth += gram.quadratic(std::span<const double>(p.value->raw() + r * nb, nb));
      }
    }
    EXPECT_NEAR(log.smooth, cfg.lambda_smooth * smooth, 1e-10);
    EXPECT_NEAR(log.l1, cfg.lambda_l1 * l1, 1e-10);
    EXPECT_NEAR(log.total, log.data_loss + log.smooth + log.l1, 1e-10);
    ++seen;
  });
  EXPECT_EQ(seen, 6u);  // 3 epochs of 2 batches
}

TEST(Train, EvaluationNeverDrawsMasks) {
  const auto spec = tiny_spec(Architecture::ckan_cnn_mlp);
  const auto data = tiny_samples(spec, 8, 3);
  auto cfg = quick_config();
  cfg.deactivation_p = 0.5;
  Model model(spec);
  train(model, data, data, cfg);
  const auto drawn = model.rng_draws();
  EXPECT_GT(drawn, 0u);
  evaluate(model, data);
  EXPECT_EQ(model.rng_draws(), drawn);
}

TEST(Train, DeterministicForFixedSeed) {
  const auto spec = tiny_spec(Architecture::cnn_kan);
  const auto data = tiny_samples(spec, 10, 4);
  auto cfg = quick_config();
  cfg.deactivation_p = 0.2;
  cfg.wall_clock = false;
  Model a(spec), b(spec);
  const auto ra = train(a, data, data, cfg);
  const auto rb = train(b, data, data, cfg);
  EXPECT_EQ(snapshot(a), snapshot(b));
  ASSERT_EQ(ra.records.size(), rb.records.size());
  for (std::size_t i = 0; i < ra.records.size(); ++i) {
    EXPECT_EQ(ra.records[i].loss, rb.records[i].loss);
    EXPECT_EQ(ra.records[i].wall_ms, 0.0);
  }
  cfg.seed = 12;
  Model c(spec);
  train(c, data, data, cfg);
  EXPECT_NE(snapshot(a), snapshot(c));
}

TEST(Train, LossDecreasesOnEdgeTask) {
  const auto spec = tiny_spec(Architecture::edge_kan);
  const auto data = Samples::from(edge_dataset(EdgeSide::left));
  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 0;
  cfg.adam.lr = 1e-2;
  cfg.eval_every = 200;
  Model model(spec);
  const auto r = train(model, data, data, cfg);
  EXPECT_LT(r.records.back().loss, 0.5 * r.records.front().loss);
}

TEST(Train, LargeSmoothnessWeightFlattensSplines) {
  auto spec = tiny_spec(Architecture::ka_theorem);
  spec.ka_dim = 1;
  const auto data = Samples::from(synth_regression("sin", 40, -1, 1, 0.1, 5));
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.batch_size = 0;
  cfg.adam.lr = 1e-2;
  cfg.eval_every = 300;
  auto curvature = [&](double lambda) {
    cfg.lambda_smooth = lambda;
    Model m(spec);
    train(m, data, data, cfg);
    return m.regularize(1.0, 0.0, false).smooth;
  };
  EXPECT_LT(curvature(1.0), 0.5 * curvature(0.0));
}

TEST(Train, NonFiniteLossThrows) {
  auto spec = tiny_spec(Architecture::ka_theorem);
  spec.ka_dim = 1;
  auto data = Samples::from(synth_regression("sin", 8, -1, 1, 0.0, 6));
  data.targets.fill(1e200);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 0;
  Model m(spec);
  EXPECT_THROW(train(m, data, data, cfg), DivergenceError);
}

TEST(Train, ConfigValidationNamesField) {
  TrainConfig cfg;
  cfg.epochs = -1;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.path(), "train.epochs");
  }
  cfg = {};
  cfg.deactivation_p = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Train, PreparedSplitAppliesFractionAndNoise) {
  LabeledDataset ds{Tensor({200, 1, 1, 1}), {}, 4};
  for (std::size_t i = 0; i < 200; ++i) ds.labels.push_back(int(i % 4));
  TrainConfig cfg;
  cfg.data_fraction = 0.5;
  cfg.noise = 0.2;
  cfg.seed = 3;
  const auto out = prepare_training_split(ds, cfg);
  EXPECT_EQ(out.size(), 100u);
}
