#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "ssar/tensor.hpp"

namespace ssar {

/// Scalar grid with its age label. Voxel (x, y, z) lives at x + X*(y + Y*z).
struct Volume {
  std::array<std::size_t, 3> dims{0, 0, 0};
  std::vector<float> voxels;
  double age_years = 0.0;
  std::string subject_id;
  std::string site;
  std::string cohort;

  std::size_t index(std::size_t x, std::size_t y, std::size_t z) const { return x + dims[0] * (y + dims[1] * z); }
  float at(std::size_t x, std::size_t y, std::size_t z) const { return voxels[index(x, y, z)]; }

  /// Throws DataError when the voxel count or age range is violated.
  void validate() const;
};

enum class NormalizeBy { StdDev, Variance };

NormalizeBy parse_normalize_by(const std::string& text);
std::string to_string(NormalizeBy mode);

/// Per-subject standardization (v - mean) / sqrt(var), or (v - mean) / var.
/// Statistics use the population convention. Throws DataError("degenerate
/// volume") when all voxels are equal.
Volume normalize(const Volume& volume, NormalizeBy mode = NormalizeBy::StdDev);

/// n slices of H x W, stored contiguously as [n, 1, H, W].
struct SliceSequence {
  std::size_t count = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> pixels;
  std::string subject_id;
  double age_years = 0.0;

  std::span<const float> slice(std::size_t i) const {
    return std::span<const float>(pixels).subspan(i * height * width, height * width);
  }

  template <typename T>
  Tensor<T> to_tensor() const {
    return Tensor<T>({count, 1, height, width}, std::vector<T>(pixels.begin(), pixels.end()));
  }
};

/// Picks `count` equally spaced slices along `axis` (nearest index to the
/// centre of each of `count` equal bins) and resizes each bilinearly to
/// `target` = {H, W} with half-pixel centres.
///
/// Slice orientation: axis 2 -> rows y, cols x; axis 1 -> rows z, cols x;
/// axis 0 -> rows z, cols y.
SliceSequence slice_and_resize(const Volume& volume, std::size_t axis, std::array<std::size_t, 2> target,
                               std::size_t count);

/// Bilinear resize of one row-major image with half-pixel centres and edge
/// clamping.
std::vector<float> resize_bilinear(std::span<const float> image, std::size_t height, std::size_t width,
                                   std::size_t out_height, std::size_t out_width);

/// Reads `<stem>.raw` (float32 little-endian) with its `<stem>.json` sidecar.
Volume read_volume(const std::filesystem::path& raw_path);
/// Writes the raw file and the sidecar next to it.
void write_volume(const Volume& volume, const std::filesystem::path& raw_path);

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path);

/// Preprocessing settings shared by training, evaluation and prediction.
struct PipelineConfig {
  std::size_t axis = 2;
  std::array<std::size_t, 2> target_hw{50, 50};
  std::size_t n_slices = 36;
  NormalizeBy normalize_by = NormalizeBy::StdDev;

  void validate() const;
};

}  // namespace ssar
