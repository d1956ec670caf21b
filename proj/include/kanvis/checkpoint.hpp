#pragma once

#include "kanvis/model.hpp"
#include "kanvis/tensor.hpp"

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace kanvis {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// u32 entry count, then per entry: u32 name length, name bytes, tensor in
/// the write_tensor layout. Little-endian throughout.
void write_named_tensors(const std::filesystem::path& file, const NamedTensors& entries);
NamedTensors read_named_tensors(const std::filesystem::path& file);

/// Sidecar path holding the model spec and spline basis metadata.
std::filesystem::path sidecar_path(const std::filesystem::path& checkpoint);

/// Writes every parameter under its "<module>.<tensor>" key plus the sidecar.
void save_checkpoint(Model& model, const std::filesystem::path& file);
/// Rebuilds the model from the sidecar and loads every parameter; missing,
/// extra or misshapen entries throw IoError.
Model load_checkpoint(const std::filesystem::path& file);

}  // namespace kanvis
