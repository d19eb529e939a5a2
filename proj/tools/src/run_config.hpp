#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "ssar/models.hpp"
#include "ssar/training.hpp"
#include "ssar/volume.hpp"

namespace ssar::cli {

/// Raw key=value settings before type resolution.
using Settings = std::map<std::string, std::string>;

/// Every accepted key with its default. Model keys without a default fall back
/// to the chosen architecture's own defaults.
const std::vector<std::pair<std::string, std::string>>& known_keys();

/// Parses a flat `key=value` file; '#' starts a comment line. Relative
/// `data.manifest` paths are resolved against the file's directory.
Settings read_settings_file(const std::filesystem::path& path);

/// Applies `key=value` overrides; unknown keys throw ConfigError.
void apply_overrides(Settings& settings, const std::vector<std::string>& overrides);

struct RunConfig {
  ModelKind kind = ModelKind::SliceSeq;
  std::filesystem::path manifest;
  PipelineConfig pipeline;
  TrainConfig train;
  std::size_t threads = 1;
  /// Descriptor for make_model.
  std::map<std::string, std::string> model_descriptor;
  /// Every effective setting, for run.json.
  Settings resolved;
};

/// Type-checks settings and fills defaults.
RunConfig resolve(const Settings& settings, ModelKind kind);

/// Pipeline settings stored next to the model descriptor in checkpoints.
std::map<std::string, std::string> pipeline_metadata(const PipelineConfig& pipeline);
PipelineConfig pipeline_from_descriptor(const std::map<std::string, std::string>& descriptor);

}  // namespace ssar::cli
