#include "kanvis/data.hpp"

#include "kanvis/errors.hpp"
#include "kanvis/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numeric>
#include <stdexcept>

namespace kanvis {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kChannels = 3;
constexpr std::size_t kSide = 32;
constexpr std::size_t kPixels = kChannels * kSide * kSide;

std::vector<unsigned char> read_all(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

LabeledDataset LabeledDataset::select(std::span<const std::size_t> indices) const {
  Shape shape = images.shape();
  shape[0] = indices.size();
  const std::size_t item = size() == 0 ? 0 : images.size() / size();
  LabeledDataset out{Tensor(shape), std::vector<int>(indices.size()), class_count};
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::size_t i = indices[r];
    if (i >= size()) throw std::out_of_range("dataset index " + std::to_string(i) + " >= " + std::to_string(size()));
    std::copy_n(images.raw() + i * item, item, out.images.raw() + r * item);
    out.labels[r] = labels[i];
  }
  return out;
}

std::vector<std::size_t> LabeledDataset::class_histogram() const {
  std::vector<std::size_t> h(class_count, 0);
  for (int l : labels) ++h.at(static_cast<std::size_t>(l));
  return h;
}

std::size_t cifar_record_bytes(CifarVariant variant) noexcept {
  return (variant == CifarVariant::cifar10 ? 1 : 2) + kPixels;
}

std::size_t cifar_class_count(CifarVariant variant) noexcept { return variant == CifarVariant::cifar10 ? 10 : 100; }

std::vector<std::string> cifar_files(CifarVariant variant, Split split) {
  if (variant == CifarVariant::cifar100) return {split == Split::train ? "train.bin" : "test.bin"};
  if (split == Split::test) return {"test_batch.bin"};
  std::vector<std::string> out;
  for (int i = 1; i <= 5; ++i) out.push_back("data_batch_" + std::to_string(i) + ".bin");
  return out;
}

LabeledDataset load_cifar_file(const fs::path& file, CifarVariant variant) {
  const auto bytes = read_all(file);
  const std::size_t rec = cifar_record_bytes(variant);
  if (bytes.size() % rec != 0) {
    throw IoError(file.string() + ": size " + std::to_string(bytes.size()) + " is not a multiple of the " +
                  std::to_string(rec) + "-byte record");
  }
  const std::size_t n = bytes.size() / rec;
  const std::size_t classes = cifar_class_count(variant);
  const std::size_t header = rec - kPixels;
  LabeledDataset ds{Tensor({n, kChannels, kSide, kSide}), std::vector<int>(n), classes};
  for (std::size_t r = 0; r < n; ++r) {
    const unsigned char* p = bytes.data() + r * rec;
    const std::size_t label = p[header - 1];
    if (label >= classes) {
      throw IoError(file.string() + ": record " + std::to_string(r) + " has label " + std::to_string(label));
    }
    ds.labels[r] = static_cast<int>(label);
    double* dst = ds.images.raw() + r * kPixels;
    for (std::size_t j = 0; j < kPixels; ++j) dst[j] = p[header + j] / 255.0;
  }
  return ds;
}

namespace {

fs::path resolve_dir(const fs::path& dir, CifarVariant variant) {
  const auto first = cifar_files(variant, Split::test).front();
  if (fs::exists(dir / first)) return dir;
  const fs::path sub = dir / (variant == CifarVariant::cifar10 ? "cifar-10-batches-bin" : "cifar-100-binary");
  if (fs::exists(sub / first)) return sub;
  return dir;
}

}  // namespace

LabeledDataset load_cifar_split(const fs::path& dir, CifarVariant variant, Split split) {
  const fs::path root = resolve_dir(dir, variant);
  std::vector<LabeledDataset> parts;
  std::size_t total = 0;
  for (const auto& name : cifar_files(variant, split)) {
    parts.push_back(load_cifar_file(root / name, variant));
    total += parts.back().size();
  }
  LabeledDataset ds{Tensor({total, kChannels, kSide, kSide}), {}, cifar_class_count(variant)};
  ds.labels.reserve(total);
  double* dst = ds.images.raw();
  for (const auto& p : parts) {
    dst = std::copy(p.images.raw(), p.images.raw() + p.images.size(), dst);
    ds.labels.insert(ds.labels.end(), p.labels.begin(), p.labels.end());
  }
  return ds;
}

void write_cifar_file(const fs::path& file, const LabeledDataset& ds, CifarVariant variant) {
  if (ds.images.rank() != 4 || ds.images.dim(1) != kChannels || ds.images.dim(2) != kSide ||
      ds.images.dim(3) != kSide || ds.images.dim(0) != ds.size()) {
    throw ShapeError("CIFAR records need [n,3,32,32] images, got " + shape_str(ds.images.shape()));
  }
  const std::size_t rec = cifar_record_bytes(variant);
  const std::size_t header = rec - kPixels;
  std::vector<unsigned char> bytes(ds.size() * rec, 0);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    unsigned char* p = bytes.data() + r * rec;
    const int label = ds.labels[r];
    if (label < 0 || static_cast<std::size_t>(label) >= cifar_class_count(variant)) {
      throw std::out_of_range("label " + std::to_string(label) + " does not fit the variant");
    }
    p[header - 1] = static_cast<unsigned char>(label);
    const double* src = ds.images.raw() + r * kPixels;
    for (std::size_t j = 0; j < kPixels; ++j) {
      p[header + j] = static_cast<unsigned char>(std::lround(std::clamp(src[j], 0.0, 1.0) * 255.0));
    }
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + file.string());
}

VerifyReport verify_cifar(const fs::path& dir, CifarVariant variant) {
  VerifyReport report;
  const fs::path root = resolve_dir(dir, variant);
  const std::size_t classes = cifar_class_count(variant);
  report.train_histogram.assign(classes, 0);
  report.test_histogram.assign(classes, 0);
  for (Split split : {Split::train, Split::test}) {
    for (const auto& name : cifar_files(variant, split)) {
      const fs::path file = root / name;
      try {
        const auto part = load_cifar_file(file, variant);
        auto& hist = split == Split::train ? report.train_histogram : report.test_histogram;
        auto& count = split == Split::train ? report.train_records : report.test_records;
        count += part.size();
        const auto h = part.class_histogram();
        for (std::size_t c = 0; c < classes; ++c) hist[c] += h[c];
      } catch (const IoError& e) {
        report.ok = false;
        report.problems.emplace_back(e.what());
      }
    }
  }
  for (Split split : {Split::train, Split::test}) {
    const auto& hist = split == Split::train ? report.train_histogram : report.test_histogram;
    const std::size_t count = split == Split::train ? report.train_records : report.test_records;
    if (count > 0 && std::find(hist.begin(), hist.end(), 0u) != hist.end()) {
      report.ok = false;
      report.problems.emplace_back(std::string(split == Split::train ? "train" : "test") + " split is missing a class");
    }
  }
  return report;
}

LabeledDataset balanced_subset(const LabeledDataset& ds, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("subset fraction must lie in (0, 1]");
  std::vector<std::vector<std::size_t>> by_class(ds.class_count);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[static_cast<std::size_t>(ds.labels[i])].push_back(i);
  std::size_t smallest = ds.size();
  for (const auto& c : by_class) smallest = std::min(smallest, c.size());
  const auto per_class = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(smallest)));
  if (per_class == 0) throw std::invalid_argument("subset fraction leaves no samples in some class");

  Rng rng(seed);
  std::vector<std::size_t> picked;
  picked.reserve(per_class * ds.class_count);
  for (auto& idx : by_class) {
    rng.shuffle(std::span<std::size_t>(idx));
    picked.insert(picked.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  rng.shuffle(std::span<std::size_t>(picked));
  return ds.select(picked);
}

LabeledDataset inject_label_noise(const LabeledDataset& ds, const NoiseSpec& spec) {
  if (!(spec.fraction >= 0.0 && spec.fraction <= 1.0)) throw std::invalid_argument("noise fraction must lie in [0, 1]");
  if (ds.class_count < 2) throw std::invalid_argument("label noise needs at least two classes");
  LabeledDataset out = ds;
  const auto n = ds.size();
  const auto changes = static_cast<std::size_t>(std::llround(spec.fraction * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(spec.seed);
  // Partial Fisher-Yates: the first `changes` slots are a uniform sample.
  for (std::size_t i = 0; i < changes; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(n - i));
    std::swap(order[i], order[j]);
  }
  for (std::size_t i = 0; i < changes; ++i) {
    int& label = out.labels[order[i]];
    auto draw = static_cast<int>(rng.below(ds.class_count - 1));
    if (draw >= label) ++draw;
    label = draw;
  }
  return out;
}

ChannelStats channel_stats(const LabeledDataset& reference) {
  const auto& x = reference.images;
  if (x.rank() != 4 || x.dim(0) == 0) throw ShapeError("channel stats need [n,C,H,W], got " + shape_str(x.shape()));
  const std::size_t C = x.dim(1);
  const std::size_t plane = x.dim(2) * x.dim(3);
  ChannelStats s{std::vector<double>(C, 0.0), std::vector<double>(C, 0.0)};
  const double count = static_cast<double>(x.dim(0) * plane);
  for (std::size_t c = 0; c < C; ++c) {
    double sum = 0.0;
    double sq = 0.0;
    for (std::size_t n = 0; n < x.dim(0); ++n) {
      const double* p = x.raw() + (n * C + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum += p[j];
        sq += p[j] * p[j];
      }
    }
    s.mean[c] = sum / count;
    s.stddev[c] = std::sqrt(std::max(sq / count - s.mean[c] * s.mean[c], 1e-12));
  }
  return s;
}

LabeledDataset standardize(const LabeledDataset& ds, const ChannelStats& stats) {
  LabeledDataset out = ds;
  const std::size_t C = ds.images.dim(1);
  if (stats.mean.size() != C) throw ShapeError("channel stats do not match the image channels");
  const std::size_t plane = ds.images.dim(2) * ds.images.dim(3);
  for (std::size_t n = 0; n < ds.images.dim(0); ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double* p = out.images.raw() + (n * C + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) p[j] = (p[j] - stats.mean[c]) / stats.stddev[c];
    }
  }
  return out;
}

LabeledDataset edge_dataset(EdgeSide side, EdgeRule rule) {
  LabeledDataset ds{Tensor({16, 1, 1, 4}), std::vector<int>(16), 2};
  for (std::size_t n = 0; n < 16; ++n) {
    int px[4];
    for (std::size_t t = 0; t < 4; ++t) {
      px[t] = static_cast<int>((n >> (3 - t)) & 1U);
      ds.images[n * 4 + t] = px[t];
    }
    const int hi = side == EdgeSide::left ? 1 : 0;
    bool edge = false;
    if (rule == EdgeRule::any_transition) {
      for (std::size_t t = 0; t + 1 < 4; ++t) edge = edge || (px[t] == hi && px[t + 1] == 1 - hi);
    } else {
      // Exactly one transition, and it goes the requested way.
      int transitions = 0;
      for (std::size_t t = 0; t + 1 < 4; ++t) transitions += px[t] != px[t + 1];
      edge = transitions == 1 && px[0] == hi;
    }
    ds.labels[n] = edge ? 1 : 0;
  }
  return ds;
}

RegressionData synth_regression(const std::string& fn, std::size_t n, double lo, double hi, double noise_sd,
                                std::uint64_t seed) {
  double (*f)(double) = nullptr;
  if (fn == "sin") {
    f = [](double x) { return std::sin(x); };
  } else if (fn == "square") {
    f = [](double x) { return x * x; };
  } else {
    throw std::invalid_argument("unknown regression function '" + fn + "'");
  }
  if (n == 0) throw std::invalid_argument("regression sample count must be positive");
  if (!(lo < hi)) throw std::invalid_argument("regression domain needs lo < hi");
  if (noise_sd < 0.0) throw std::invalid_argument("noise_sd must be >= 0");
  Rng rng(seed);
  RegressionData d{Tensor({n, 1}), Tensor({n, 1})};
  for (std::size_t i = 0; i < n; ++i) {
    const double x = lo + (hi - lo) * rng.uniform();
    d.x[i] = x;
    d.y[i] = f(x) + (noise_sd > 0.0 ? rng.normal(0.0, noise_sd) : 0.0);
  }
  return d;
}

namespace {

/// Per-class, per-channel smooth patterns in [-1, 1] built from a few
/// Gaussian blobs.
std::vector<Tensor> class_prototypes(const SyntheticCifarSpec& spec) {
  Rng rng = derive_stream(spec.seed, "synthetic_cifar", "prototypes");
  std::vector<Tensor> protos;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    Tensor p({kChannels, kSide, kSide});
    for (std::size_t ch = 0; ch < kChannels; ++ch) {
      for (int blob = 0; blob < 4; ++blob) {
        const double cy = rng.uniform() * kSide;
        const double cx = rng.uniform() * kSide;
        const double r = 3.0 + 5.0 * rng.uniform();
        const double a = rng.uniform() < 0.5 ? -1.0 : 1.0;
        for (std::size_t y = 0; y < kSide; ++y) {
          for (std::size_t x = 0; x < kSide; ++x) {
            const double d2 = (y - cy) * (y - cy) + (x - cx) * (x - cx);
            p[(ch * kSide + y) * kSide + x] += a * std::exp(-d2 / (2.0 * r * r));
          }
        }
      }
    }
    for (auto& v : p.data()) v = std::tanh(v);
    protos.push_back(std::move(p));
  }
  return protos;
}

}  // namespace

LabeledDataset synthetic_cifar(const SyntheticCifarSpec& spec, Split split) {
  if (spec.classes < 2 || spec.classes > 10) throw std::invalid_argument("synthetic CIFAR supports 2..10 classes");
  const auto protos = class_prototypes(spec);
  const std::size_t per_class = split == Split::train ? spec.train_per_class : spec.test_per_class;
  const std::size_t n = per_class * spec.classes;
  Rng rng = derive_stream(spec.seed, "synthetic_cifar", split == Split::train ? "train" : "test");
  LabeledDataset ds{Tensor({n, kChannels, kSide, kSide}), std::vector<int>(n), spec.classes};
  const auto span = static_cast<std::int64_t>(2 * spec.max_shift + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % spec.classes;
    ds.labels[i] = static_cast<int>(label);
    const auto dy = static_cast<std::int64_t>(rng.below(span)) - static_cast<std::int64_t>(spec.max_shift);
    const auto dx = static_cast<std::int64_t>(rng.below(span)) - static_cast<std::int64_t>(spec.max_shift);
    const double contrast = 0.15 + 0.2 * rng.uniform();
    const double base = 0.35 + 0.3 * rng.uniform();
    double* dst = ds.images.raw() + i * kPixels;
    for (std::size_t ch = 0; ch < kChannels; ++ch) {
      for (std::size_t y = 0; y < kSide; ++y) {
        for (std::size_t x = 0; x < kSide; ++x) {
          const auto sy = static_cast<std::size_t>((static_cast<std::int64_t>(y + kSide) + dy) % kSide);
          const auto sx = static_cast<std::size_t>((static_cast<std::int64_t>(x + kSide) + dx) % kSide);
          const double v = base + contrast * protos[label][(ch * kSide + sy) * kSide + sx] +
                           spec.pixel_noise * rng.normal();
          // Quantize so the in-memory data equals what the binary files hold.
          dst[(ch * kSide + y) * kSide + x] = std::lround(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
        }
      }
    }
  }
  return ds;
}

void write_synthetic_cifar(const fs::path& dir, const SyntheticCifarSpec& spec) {
  fs::create_directories(dir);
  const auto train = synthetic_cifar(spec, Split::train);
  const auto files = cifar_files(CifarVariant::cifar10, Split::train);
  const std::size_t chunk = (train.size() + files.size() - 1) / files.size();
  for (std::size_t f = 0; f < files.size(); ++f) {
    std::vector<std::size_t> idx;
    for (std::size_t i = f * chunk; i < std::min(train.size(), (f + 1) * chunk); ++i) idx.push_back(i);
    write_cifar_file(dir / files[f], train.select(idx), CifarVariant::cifar10);
  }
  write_cifar_file(dir / "test_batch.bin", synthetic_cifar(spec, Split::test), CifarVariant::cifar10);
}

}  // namespace kanvis
