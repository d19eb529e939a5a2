#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <string>

#include "ssar/models.hpp"

namespace ssar {

/// Binary checkpoint layout, all integers 64-bit little-endian:
///
///   "SSAR1"
///   u64 descriptor length, descriptor text ("key=value\n" lines, sorted)
///   u64 parameter count
///   per parameter, in declaration order:
///     u64 name length, name bytes, u64 rank, rank x u64 extents,
///     numel x float32 little-endian values
///
/// `extra` entries (e.g. preprocessing settings) are appended to the model's
/// own descriptor and must not collide with it.
template <typename T>
void save_weights(const AgeModel<T>& model, const std::filesystem::path& path,
                  const std::map<std::string, std::string>& extra = {});

struct LoadedModel {
  std::unique_ptr<AgeModel<float>> model;
  /// Full descriptor, model keys and extras.
  std::map<std::string, std::string> descriptor;
};

/// Rebuilds the architecture from the file's descriptor and loads its values.
LoadedModel load_weights(const std::filesystem::path& path);

/// Loads values into an existing model. Throws ConfigError listing every
/// parameter whose name or shape differs.
template <typename T>
void load_weights_into(AgeModel<T>& model, const std::filesystem::path& path);

/// Descriptor of a checkpoint without loading values.
std::map<std::string, std::string> read_weights_descriptor(const std::filesystem::path& path);

}  // namespace ssar
