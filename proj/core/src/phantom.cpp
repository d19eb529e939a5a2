#include "ssar/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ssar/errors.hpp"

namespace ssar {

double phantom_radius(double age, double age_max, const std::array<std::size_t, 3>& dims) {
  const double half_extent = static_cast<double>(*std::min_element(dims.begin(), dims.end())) / 2.0;
  const double r_min = 0.15 * half_extent;
  const double r_max = 0.9 * half_extent;
  return r_min + (age / age_max) * (r_max - r_min);
}

Volume generate_phantom(double age, double age_max, const std::array<std::size_t, 3>& dims, double noise_sigma,
                        std::uint64_t seed, const std::string& subject_id) {
  if (!(age_max > 0.0)) throw ConfigError("phantom: age_max must be positive");
  if (!(age >= 0.0 && age <= age_max)) {
    throw ConfigError("phantom: age " + std::to_string(age) + " outside [0, " + std::to_string(age_max) + "]");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom: noise sigma must be non-negative");
  for (auto d : dims) {
    if (d < 8) throw ConfigError("phantom: every extent must be at least 8");
  }

  Volume v;
  v.dims = dims;
  v.age_years = age;
  v.subject_id = subject_id;
  v.site = "synthetic";
  v.cohort = "phantom";
  v.voxels.assign(dims[0] * dims[1] * dims[2], 0.0f);

  const double r = phantom_radius(age, age_max, dims);
  const double inner = r / 2.0;
  const double inner_value = 1.0 + age / age_max;
  const double cx = (static_cast<double>(dims[0]) - 1.0) / 2.0;
  const double cy = (static_cast<double>(dims[1]) - 1.0) / 2.0;
  const double cz = (static_cast<double>(dims[2]) - 1.0) / 2.0;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
  for (std::size_t z = 0; z < dims[2]; ++z) {
    for (std::size_t y = 0; y < dims[1]; ++y) {
      for (std::size_t x = 0; x < dims[0]; ++x) {
        const double dx = static_cast<double>(x) - cx;
        const double dy = static_cast<double>(y) - cy;
        const double dz = static_cast<double>(z) - cz;
        const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
        double value = 0.0;
        if (dist <= inner) {
          value = inner_value;
        } else if (dist <= r) {
          value = 1.0;
        }
        if (noise_sigma > 0.0) value += noise(rng);
        v.voxels[v.index(x, y, z)] = static_cast<float>(value);
      }
    }
  }
  return v;
}

}  // namespace ssar
