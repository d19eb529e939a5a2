#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace ssar {

enum class Split { Train, Test };

std::string to_string(Split split);
Split parse_split(const std::string& text);

struct ManifestRow {
  std::string subject_id;
  std::string volume_path;  // as written; relative paths resolve against the manifest's directory
  double age_years = 0.0;
  std::string cohort;
  Split split = Split::Train;
};

/// CSV with header `subject_id,volume_path,age_years,cohort,split`. Fields
/// are unquoted and must not contain commas.
struct Manifest {
  std::vector<ManifestRow> rows;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const ManifestRow& row) const;
  /// Rows of one split, in manifest order.
  std::vector<ManifestRow> select(Split split) const;
  /// Throws DataError on duplicate subject ids or out-of-range ages.
  void validate() const;
};

/// With `check_paths`, every volume file must exist.
Manifest read_manifest(const std::filesystem::path& path, bool check_paths = true);
void write_manifest(const Manifest& manifest, const std::filesystem::path& path);

/// Seeded shuffle of subjects; the first floor(n * train_frac) become train
/// (clamped so both splits are non-empty), the rest test. Row order is kept.
Manifest split_manifest(const Manifest& manifest, double train_frac, std::uint64_t seed);

}  // namespace ssar
