#include "kanvis/checkpoint.hpp"

#include "kanvis/config.hpp"
#include "kanvis/errors.hpp"

#include <cstdint>
#include <fstream>
#include <map>

namespace kanvis {
namespace fs = std::filesystem;

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFFU);
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& file) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError(file.string() + ": truncated checkpoint");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

}  // namespace

void write_named_tensors(const fs::path& file, const NamedTensors& entries) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  put_u32(out, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw IoError("short write to " + file.string());
}

NamedTensors read_named_tensors(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  const std::uint32_t count = get_u32(in, file);
  NamedTensors entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = get_u32(in, file);
    if (len > 4096) throw IoError(file.string() + ": implausible entry name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw IoError(file.string() + ": truncated checkpoint");
    entries.emplace_back(std::move(name), read_tensor(in));
  }
  return entries;
}

fs::path sidecar_path(const fs::path& checkpoint) {
  fs::path p = checkpoint;
  p += ".json";
  return p;
}

void save_checkpoint(Model& model, const fs::path& file) {
  NamedTensors entries;
  for (const auto& p : model.parameters()) entries.emplace_back(p.name, *p.value);
  write_named_tensors(file, entries);
  const auto& spec = model.spec();
  Json meta{{"model", to_json(spec)},
            {"basis", {{"grid", spec.grid}, {"order", spec.order}, {"x_min", spec.domain_min}, {"x_max", spec.domain_max}}},
            {"tensors", Json::array()}};
  for (const auto& [name, t] : entries) meta["tensors"].push_back({{"name", name}, {"shape", t.shape()}});
  std::ofstream out(sidecar_path(file));
  if (!out) throw IoError("cannot write " + sidecar_path(file).string());
  out << meta.dump(2) << '\n';
}

Model load_checkpoint(const fs::path& file) {
  std::ifstream side(sidecar_path(file));
  if (!side) throw IoError("missing checkpoint sidecar " + sidecar_path(file).string());
  const Json meta = Json::parse(side, nullptr, false);
  if (meta.is_discarded() || !meta.contains("model")) throw IoError(sidecar_path(file).string() + ": malformed sidecar");
  Model model(model_spec_from_json(meta.at("model")));
  std::map<std::string, Tensor> stored;
  for (auto& [name, t] : read_named_tensors(file)) stored.emplace(name, std::move(t));
  auto params = model.parameters();
  if (stored.size() != params.size()) {
    throw IoError(file.string() + ": holds " + std::to_string(stored.size()) + " tensors, model expects " +
                  std::to_string(params.size()));
  }
  for (auto& p : params) {
    auto it = stored.find(p.name);
    if (it == stored.end()) throw IoError(file.string() + ": missing tensor " + p.name);
    if (it->second.shape() != p.value->shape()) {
      throw IoError(file.string() + ": tensor " + p.name + " has shape " + shape_str(it->second.shape()) +
                    ", expected " + shape_str(p.value->shape()));
    }
    *p.value = std::move(it->second);
  }
  return model;
}

}  // namespace kanvis
