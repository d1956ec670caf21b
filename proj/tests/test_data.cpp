#include "kanvis/data.hpp"
#include "kanvis/errors.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

using namespace kanvis;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("kanvis_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_bytes(const fs::path& file, const std::vector<unsigned char>& bytes) {
  std::ofstream out(file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
}

// Two hand-built CIFAR-10 records: label, then 3072 pixel bytes.
std::vector<unsigned char> fixture_records() {
  std::vector<unsigned char> bytes;
  for (unsigned char label : {7, 2}) {
    bytes.push_back(label);
    for (std::size_t i = 0; i < 3072; ++i) bytes.push_back(static_cast<unsigned char>((i * 7 + label) % 256));
  }
  bytes[1] = 255;
  bytes[2] = 0;
  return bytes;
}

LabeledDataset flat_dataset(std::size_t per_class, std::size_t classes) {
  LabeledDataset ds{Tensor({per_class * classes, 1, 1, 1}), {}, classes};
  for (std::size_t i = 0; i < per_class * classes; ++i) {
    ds.labels.push_back(int(i % classes));
    ds.images[i] = double(i);
  }
  return ds;
}

// Does some integer weight vector (and optional bias) in [-8, 8] give
// w.x + b > 0 exactly on the positive items? Argmax ties resolve to class 0,
// hence the strict inequality.
bool linearly_separable(const LabeledDataset& ds, bool with_bias) {
  const int r = 8;
  for (int w0 = -r; w0 <= r; ++w0)
    for (int w1 = -r; w1 <= r; ++w1)
      for (int w2 = -r; w2 <= r; ++w2)
        for (int w3 = -r; w3 <= r; ++w3)
          for (int b = with_bias ? -2 * r : 0; b <= (with_bias ? 2 * r : 0); ++b) {
            const int w[4] = {w0, w1, w2, w3};
            bool ok = true;
            for (std::size_t n = 0; n < 16 && ok; ++n) {
              int s = b;
              for (std::size_t t = 0; t < 4; ++t) s += w[t] * int(ds.images[n * 4 + t]);
              ok = (s > 0) == (ds.labels[n] == 1);
            }
            if (ok) return true;
          }
  return false;
}

std::vector<int> positives(const LabeledDataset& ds) {
  std::vector<int> out;
  for (std::size_t n = 0; n < 16; ++n) {
    if (ds.labels[n]) out.push_back(int(n));
  }
  return out;
}

}  // namespace

TEST(Cifar, FixtureRoundTrip) {
  TempDir dir;
  const auto bytes = fixture_records();
  write_bytes(dir.path / "batch.bin", bytes);
  const auto ds = load_cifar_file(dir.path / "batch.bin", CifarVariant::cifar10);
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.images.shape(), (Shape{2, 3, 32, 32}));
  EXPECT_EQ(ds.labels, (std::vector<int>{7, 2}));
  EXPECT_EQ(ds.images[0], 1.0);  // byte 255
  EXPECT_EQ(ds.images[1], 0.0);
  EXPECT_DOUBLE_EQ(ds.images[3072 + 5], ((5 * 7 + 2) % 256) / 255.0);

  write_cifar_file(dir.path / "again.bin", ds, CifarVariant::cifar10);
  std::ifstream in(dir.path / "again.bin", std::ios::binary);
  std::vector<unsigned char> back((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  EXPECT_EQ(back, bytes);
}

TEST(Cifar, TruncatedFileIsRejected) {
  TempDir dir;
  auto bytes = fixture_records();
  bytes.resize(bytes.size() - 3072);
  write_bytes(dir.path / "short.bin", bytes);
  EXPECT_THROW(load_cifar_file(dir.path / "short.bin", CifarVariant::cifar10), IoError);
  EXPECT_THROW(load_cifar_file(dir.path / "missing.bin", CifarVariant::cifar10), IoError);
}

TEST(Cifar, LabelOutOfRangeIsRejected) {
  TempDir dir;
  auto bytes = fixture_records();
  bytes[0] = 10;
  write_bytes(dir.path / "bad.bin", bytes);
  EXPECT_THROW(load_cifar_file(dir.path / "bad.bin", CifarVariant::cifar10), IoError);
}

TEST(Cifar, HundredUsesFineLabel) {
  TempDir dir;
  std::vector<unsigned char> bytes{3, 87};
  bytes.resize(3074, 128);
  write_bytes(dir.path / "train.bin", bytes);
  const auto ds = load_cifar_file(dir.path / "train.bin", CifarVariant::cifar100);
  EXPECT_EQ(ds.labels, std::vector<int>{87});
  EXPECT_EQ(ds.class_count, 100u);
  EXPECT_EQ(cifar_record_bytes(CifarVariant::cifar100), 3074u);
}

TEST(Cifar, VerifyReportsMissingFilesAndCounts) {
  TempDir dir;
  EXPECT_FALSE(verify_cifar(dir.path, CifarVariant::cifar10).ok);
  SyntheticCifarSpec spec;
  spec.train_per_class = 5;
  spec.test_per_class = 2;
  write_synthetic_cifar(dir.path, spec);
  const auto report = verify_cifar(dir.path, CifarVariant::cifar10);
  EXPECT_TRUE(report.ok);
  EXPECT_EQ(report.train_records, 50u);
  EXPECT_EQ(report.test_records, 20u);
  EXPECT_EQ(report.train_histogram, std::vector<std::size_t>(10, 5));
  const auto train = load_cifar_split(dir.path, CifarVariant::cifar10, Split::train);
  EXPECT_EQ(train.size(), 50u);
}

TEST(BalancedSubset, EqualPerClassCounts) {
  const auto ds = flat_dataset(5000, 10);
  const auto sub = balanced_subset(ds, 0.2, 1);
  EXPECT_EQ(sub.size(), 10000u);
  EXPECT_EQ(sub.class_histogram(), std::vector<std::size_t>(10, 1000));
  // Each item keeps its own label and no item is repeated.
  std::vector<double> ids(sub.images.data().begin(), sub.images.data().end());
  for (std::size_t i = 0; i < sub.size(); ++i) EXPECT_EQ(sub.labels[i], int(ids[i]) % 10);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
}

TEST(BalancedSubset, DeterministicPerSeed) {
  const auto ds = flat_dataset(100, 4);
  EXPECT_EQ(balanced_subset(ds, 0.3, 5).images, balanced_subset(ds, 0.3, 5).images);
  EXPECT_NE(balanced_subset(ds, 0.3, 5).images, balanced_subset(ds, 0.3, 6).images);
  EXPECT_THROW(balanced_subset(ds, 0.0, 1), std::invalid_argument);
  EXPECT_THROW(balanced_subset(ds, 1.5, 1), std::invalid_argument);
}

TEST(LabelNoise, ChangesExactlyTheRequestedCount) {
  const auto ds = flat_dataset(1000, 10);
  const auto noisy = inject_label_noise(ds, {0.3, 4});
  std::size_t changed = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    changed += noisy.labels[i] != ds.labels[i];
    EXPECT_GE(noisy.labels[i], 0);
    EXPECT_LT(noisy.labels[i], 10);
  }
  EXPECT_EQ(changed, 3000u);
  EXPECT_EQ(noisy.images, ds.images);
  EXPECT_EQ(inject_label_noise(ds, {0.3, 4}).labels, noisy.labels);
}

TEST(LabelNoise, FullNoiseChangesEveryLabel) {
  const auto ds = flat_dataset(30, 3);
  const auto noisy = inject_label_noise(ds, {1.0, 1});
  for (std::size_t i = 0; i < ds.size(); ++i) EXPECT_NE(noisy.labels[i], ds.labels[i]);
  EXPECT_EQ(inject_label_noise(ds, {0.0, 1}).labels, ds.labels);
}

TEST(Standardize, ZeroMeanUnitVariance) {
  SyntheticCifarSpec spec;
  spec.train_per_class = 4;
  const auto ds = synthetic_cifar(spec, Split::train);
  const auto z = standardize(ds, channel_stats(ds));
  const auto stats = channel_stats(z);
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(stats.mean[c], 0.0, 1e-10);
    EXPECT_NEAR(stats.stddev[c], 1.0, 1e-8);
  }
}

TEST(EdgeDataset, SpecExamples) {
  const auto left = edge_dataset(EdgeSide::left);
  const auto right = edge_dataset(EdgeSide::right);
  EXPECT_EQ(left.images.shape(), (Shape{16, 1, 1, 4}));
  // item n has pixels equal to the bits of n, most significant first
  EXPECT_EQ(left.images[12 * 4 + 0], 1.0);
  EXPECT_EQ(left.images[12 * 4 + 1], 1.0);
  EXPECT_EQ(left.images[12 * 4 + 2], 0.0);
  EXPECT_EQ(left.images[12 * 4 + 3], 0.0);
  EXPECT_EQ(positives(left), (std::vector<int>{8, 12, 14}));   // 1000 1100 1110
  EXPECT_EQ(positives(right), (std::vector<int>{1, 3, 7}));    // 0001 0011 0111
  EXPECT_EQ(left.labels[0], 0);
  EXPECT_EQ(left.labels[15], 0);
}

TEST(EdgeDataset, SeparabilityOracle) {
  for (auto side : {EdgeSide::left, EdgeSide::right}) {
    const auto ds = edge_dataset(side);
    EXPECT_TRUE(linearly_separable(ds, true));
    EXPECT_FALSE(linearly_separable(ds, false));
    const auto any = edge_dataset(side, EdgeRule::any_transition);
    EXPECT_FALSE(linearly_separable(any, true));
  }
}

TEST(Regression, NoiseMoments) {
  const auto d = synth_regression("sin", 20000, -M_PI, M_PI, 0.2, 3);
  double s = 0.0, ss = 0.0;
  for (std::size_t i = 0; i < 20000; ++i) {
    EXPECT_GE(d.x[i], -M_PI);
    EXPECT_LE(d.x[i], M_PI);
    const double e = d.y[i] - std::sin(d.x[i]);
    s += e;
    ss += e * e;
  }
  EXPECT_NEAR(s / 20000, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(ss / 20000), 0.2, 0.005);
  const auto clean = synth_regression("square", 10, -1, 1, 0.0, 3);
  for (std::size_t i = 0; i < 10; ++i) EXPECT_EQ(clean.y[i], clean.x[i] * clean.x[i]);
  EXPECT_THROW(synth_regression("cube", 10, -1, 1, 0.0, 3), std::invalid_argument);
}

TEST(SyntheticCifar, ShapesAndCountsAndRange) {
  SyntheticCifarSpec spec;
  spec.train_per_class = 6;
  spec.test_per_class = 3;
  const auto train = synthetic_cifar(spec, Split::train);
  const auto test = synthetic_cifar(spec, Split::test);
  EXPECT_EQ(train.images.shape(), (Shape{60, 3, 32, 32}));
  EXPECT_EQ(test.class_histogram(), std::vector<std::size_t>(10, 3));
  for (double v : train.images.data()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
    EXPECT_NEAR(v * 255.0, std::round(v * 255.0), 1e-9);
  }
  EXPECT_EQ(synthetic_cifar(spec, Split::train).images, train.images);
}

TEST(SyntheticCifar, ClassesCarrySignal) {
  SyntheticCifarSpec spec;
  spec.train_per_class = 40;
  spec.test_per_class = 20;
  const auto train = synthetic_cifar(spec, Split::train);
  const auto test = synthetic_cifar(spec, Split::test);
  const std::size_t d = 3 * 32 * 32;
  std::vector<std::vector<double>> centroid(10, std::vector<double>(d, 0.0));
  for (std::size_t n = 0; n < train.size(); ++n) {
    for (std::size_t j = 0; j < d; ++j) centroid[train.labels[n]][j] += train.images[n * d + j] / 40.0;
  }
  std::size_t correct = 0;
  for (std::size_t n = 0; n < test.size(); ++n) {
    int best = 0;
    double best_d = 1e300;
    for (int c = 0; c < 10; ++c) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) dist += std::pow(test.images[n * d + j] - centroid[c][j], 2);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += best == test.labels[n];
  }
  // Nearest centroid should do far better than the 10% chance level.
  EXPECT_GT(correct / double(test.size()), 0.3);
}
