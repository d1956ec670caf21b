#pragma once

#include "kanvis/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace kanvis {

struct LabeledDataset {
  Tensor images;            // [n, C, H, W], values in [0, 1]
  std::vector<int> labels;  // length n, each in [0, class_count)
  std::size_t class_count = 0;

  std::size_t size() const noexcept { return labels.size(); }
  /// Items at `indices`, in that order.
  LabeledDataset select(std::span<const std::size_t> indices) const;
  std::vector<std::size_t> class_histogram() const;
};

enum class CifarVariant { cifar10, cifar100 };
enum class Split { train, test };

std::size_t cifar_record_bytes(CifarVariant variant) noexcept;
std::size_t cifar_class_count(CifarVariant variant) noexcept;
/// File names of one split, relative to the dataset directory.
std::vector<std::string> cifar_files(CifarVariant variant, Split split);

/// One binary file of records. Throws IoError on a missing file, a size that
/// is not a whole number of records, or a label outside the class range.
LabeledDataset load_cifar_file(const std::filesystem::path& file, CifarVariant variant);
/// Concatenates the split's files found in `dir` (or its official
/// cifar-10-batches-bin / cifar-100-binary subdirectory).
LabeledDataset load_cifar_split(const std::filesystem::path& dir, CifarVariant variant, Split split);
/// Writes records in the official layout; pixels are rounded to bytes. For
/// CIFAR-100 the coarse label byte is written as 0.
void write_cifar_file(const std::filesystem::path& file, const LabeledDataset& ds, CifarVariant variant);

struct VerifyReport {
  bool ok = true;
  std::vector<std::string> problems;
  std::size_t train_records = 0;
  std::size_t test_records = 0;
  std::vector<std::size_t> train_histogram;
  std::vector<std::size_t> test_histogram;
};
/// Checks presence and sizes of every split file and tallies labels.
VerifyReport verify_cifar(const std::filesystem::path& dir, CifarVariant variant);

/// Equal per-class counts floor(fraction * smallest class), chosen uniformly
/// without replacement, then shuffled.
LabeledDataset balanced_subset(const LabeledDataset& ds, double fraction, std::uint64_t seed);

struct NoiseSpec {
  double fraction = 0.0;
  std::uint64_t seed = 0;
};
/// Relabels exactly round(fraction * n) items, each to a uniformly chosen
/// different class.
LabeledDataset inject_label_noise(const LabeledDataset& ds, const NoiseSpec& spec);

/// Per-channel mean/std computed on `reference`, applied to `ds`.
struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};
ChannelStats channel_stats(const LabeledDataset& reference);
LabeledDataset standardize(const LabeledDataset& ds, const ChannelStats& stats);

enum class EdgeSide { left, right };
enum class EdgeRule {
  /// The four pixels form one step: 1..10..0 (left) or 0..01..1 (right).
  single_step,
  /// Some adjacent pair equals (1,0) (left) or (0,1) (right).
  any_transition,
};

/// All 16 binary four-pixel images as [16, 1, 1, 4]; item n has pixel t equal
/// to bit (3 - t) of n. Label 1 marks the edge.
LabeledDataset edge_dataset(EdgeSide side, EdgeRule rule = EdgeRule::single_step);

struct RegressionData {
  Tensor x;  // [n, 1]
  Tensor y;  // [n, 1]
};

/// x ~ Uniform[lo, hi], y = fn(x) + Normal(0, noise_sd). `fn` is "sin" or
/// "square".
RegressionData synth_regression(const std::string& fn, std::size_t n, double lo, double hi, double noise_sd,
                                std::uint64_t seed);

struct SyntheticCifarSpec {
  std::size_t train_per_class = 1000;
  std::size_t test_per_class = 500;
  std::size_t classes = 10;
  double pixel_noise = 0.5;
  std::size_t max_shift = 3;
  std::uint64_t seed = 2024;
};

/// Class-conditional 3x32x32 images built from per-class blob prototypes with
/// random shifts, contrast and pixel noise.
LabeledDataset synthetic_cifar(const SyntheticCifarSpec& spec, Split split);
/// Writes both splits as CIFAR-10 binary files into `dir`.
void write_synthetic_cifar(const std::filesystem::path& dir, const SyntheticCifarSpec& spec);

}  // namespace kanvis
