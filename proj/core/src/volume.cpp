#include "ssar/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <json.hpp>

#include "ssar/errors.hpp"

namespace ssar {

void Volume::validate() const {
  for (auto d : dims) {
    if (d == 0) throw DataError("volume " + subject_id + " has a zero extent");
  }
  if (voxels.size() != dims[0] * dims[1] * dims[2]) {
    throw DataError("volume " + subject_id + ": " + std::to_string(voxels.size()) + " voxels for dims [" +
                    std::to_string(dims[0]) + ", " + std::to_string(dims[1]) + ", " + std::to_string(dims[2]) + "]");
  }
  if (!(age_years >= 0.0 && age_years <= 120.0)) {
    throw DataError("volume " + subject_id + ": age " + std::to_string(age_years) + " outside [0, 120]");
  }
}

NormalizeBy parse_normalize_by(const std::string& text) {
  if (text == "std") return NormalizeBy::StdDev;
  if (text == "variance") return NormalizeBy::Variance;
  throw ConfigError("normalize_by must be 'std' or 'variance', got '" + text + "'");
}

std::string to_string(NormalizeBy mode) { return mode == NormalizeBy::StdDev ? "std" : "variance"; }

Volume normalize(const Volume& volume, NormalizeBy mode) {
  volume.validate();
  const auto& v = volume.voxels;
  const bool constant = std::all_of(v.begin(), v.end(), [&](float x) { return x == v.front(); });
  if (constant) throw DataError("degenerate volume " + volume.subject_id + ": zero variance");
  double mean = 0.0;
  for (float x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (float x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  if (!(var > 0.0)) throw DataError("degenerate volume " + volume.subject_id + ": zero variance");
  const double divisor = mode == NormalizeBy::StdDev ? std::sqrt(var) : var;

  Volume out = volume;
  for (std::size_t i = 0; i < v.size(); ++i) out.voxels[i] = static_cast<float>((v[i] - mean) / divisor);
  return out;
}

std::vector<float> resize_bilinear(std::span<const float> image, std::size_t height, std::size_t width,
                                   std::size_t out_height, std::size_t out_width) {
  if (image.size() != height * width) throw ShapeError("resize_bilinear: image size does not match extents");
  if (out_height == 0 || out_width == 0) throw ShapeError("resize_bilinear: target extents must be positive");
  auto source_coord = [](std::size_t o, std::size_t in, std::size_t out) {
    double s = (static_cast<double>(o) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    return std::clamp(s, 0.0, static_cast<double>(in - 1));
  };
  std::vector<float> out(out_height * out_width);
  for (std::size_t oy = 0; oy < out_height; ++oy) {
    const double sy = source_coord(oy, height, out_height);
    const std::size_t y0 = static_cast<std::size_t>(sy);
    const std::size_t y1 = std::min(y0 + 1, height - 1);
    const double wy = sy - static_cast<double>(y0);
    for (std::size_t ox = 0; ox < out_width; ++ox) {
      const double sx = source_coord(ox, width, out_width);
      const std::size_t x0 = static_cast<std::size_t>(sx);
      const std::size_t x1 = std::min(x0 + 1, width - 1);
      const double wx = sx - static_cast<double>(x0);
      const double top = (1.0 - wx) * image[y0 * width + x0] + wx * image[y0 * width + x1];
      const double bottom = (1.0 - wx) * image[y1 * width + x0] + wx * image[y1 * width + x1];
      out[oy * out_width + ox] = static_cast<float>((1.0 - wy) * top + wy * bottom);
    }
  }
  return out;
}

SliceSequence slice_and_resize(const Volume& volume, std::size_t axis, std::array<std::size_t, 2> target,
                               std::size_t count) {
  volume.validate();
  if (axis > 2) throw ConfigError("slice axis must be 0, 1 or 2, got " + std::to_string(axis));
  if (count == 0) throw ConfigError("slice count must be positive");
  const auto [X, Y, Z] = volume.dims;
  const std::size_t extent = volume.dims[axis];
  if (extent < count) {
    throw DataError("volume " + volume.subject_id + ": axis " + std::to_string(axis) + " has " +
                    std::to_string(extent) + " slices, fewer than the " + std::to_string(count) + " requested");
  }
  // Plane extents (rows, cols) for each slicing axis.
  const std::size_t rows = axis == 2 ? Y : Z;
  const std::size_t cols = axis == 0 ? Y : X;

  SliceSequence seq;
  seq.count = count;
  seq.height = target[0];
  seq.width = target[1];
  seq.subject_id = volume.subject_id;
  seq.age_years = volume.age_years;
  seq.pixels.reserve(count * target[0] * target[1]);

  std::vector<float> plane(rows * cols);
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = (static_cast<double>(i) + 0.5) * static_cast<double>(extent) / static_cast<double>(count) - 0.5;
    const std::size_t s = std::min(static_cast<std::size_t>(std::floor(std::max(pos, 0.0) + 0.5)), extent - 1);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        float v = 0.0f;
        switch (axis) {
          case 0: v = volume.at(s, c, r); break;
          case 1: v = volume.at(c, s, r); break;
          default: v = volume.at(c, r, s); break;
        }
        plane[r * cols + c] = v;
      }
    }
    auto resized = resize_bilinear(plane, rows, cols, target[0], target[1]);
    seq.pixels.insert(seq.pixels.end(), resized.begin(), resized.end());
  }
  return seq;
}

std::filesystem::path sidecar_path(const std::filesystem::path& raw_path) {
  auto p = raw_path;
  p.replace_extension(".json");
  return p;
}

void write_volume(const Volume& volume, const std::filesystem::path& raw_path) {
  volume.validate();
  nlohmann::json header;
  header["dims"] = volume.dims;
  header["dtype"] = "f32le";
  header["age_years"] = volume.age_years;
  header["subject_id"] = volume.subject_id;
  header["site"] = volume.site;
  header["cohort"] = volume.cohort;

  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) throw DataError("cannot write " + raw_path.string());
  std::vector<unsigned char> bytes(volume.voxels.size() * 4);
  for (std::size_t i = 0; i < volume.voxels.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(volume.voxels[i]);
    for (int k = 0; k < 4; ++k) bytes[4 * i + k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xFF);
  }
  raw.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!raw) throw DataError("failed writing " + raw_path.string());

  std::ofstream side(sidecar_path(raw_path), std::ios::trunc);
  if (!side) throw DataError("cannot write " + sidecar_path(raw_path).string());
  side << header.dump(2) << '\n';
}

Volume read_volume(const std::filesystem::path& raw_path) {
  const auto side_path = sidecar_path(raw_path);
  std::ifstream side(side_path);
  if (!side) throw DataError("missing volume header " + side_path.string());
  nlohmann::json header;
  try {
    side >> header;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed volume header " + side_path.string() + ": " + e.what());
  }

  Volume v;
  try {
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32le") throw DataError("unknown dtype '" + dtype + "' in " + side_path.string());
    const auto dims = header.at("dims").get<std::vector<long long>>();
    if (dims.size() != 3) throw DataError("dims in " + side_path.string() + " must have three entries");
    for (std::size_t i = 0; i < 3; ++i) {
      if (dims[i] <= 0) throw DataError("dims in " + side_path.string() + " must be positive");
      v.dims[i] = static_cast<std::size_t>(dims[i]);
    }
    v.age_years = header.at("age_years").get<double>();
    v.subject_id = header.at("subject_id").get<std::string>();
    v.site = header.value("site", std::string());
    v.cohort = header.value("cohort", std::string());
  } catch (const nlohmann::json::exception& e) {
    throw DataError("invalid volume header " + side_path.string() + ": " + e.what());
  }

  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw DataError("cannot open " + raw_path.string());
  raw.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(raw.tellg());
  raw.seekg(0, std::ios::beg);
  const std::size_t expected = v.dims[0] * v.dims[1] * v.dims[2] * 4;
  if (size != expected) {
    throw DataError("byte length mismatch in " + raw_path.string() + ": header implies " + std::to_string(expected) +
                    " bytes, file has " + std::to_string(size));
  }
  std::vector<unsigned char> bytes(size);
  raw.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  if (static_cast<std::size_t>(raw.gcount()) != size) throw DataError("short read from " + raw_path.string());
  v.voxels.resize(size / 4);
  for (std::size_t i = 0; i < v.voxels.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 3; k >= 0; --k) bits = (bits << 8) | bytes[4 * i + k];
    v.voxels[i] = std::bit_cast<float>(bits);
  }
  v.validate();
  return v;
}

void PipelineConfig::validate() const {
  if (axis > 2) throw ConfigError("data.axis must be 0, 1 or 2");
  if (target_hw[0] == 0 || target_hw[1] == 0) throw ConfigError("data.target_hw must be positive");
  if (n_slices == 0) throw ConfigError("data.n_slices must be positive");
}

}  // namespace ssar
