#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>

#include "ssar/volume.hpp"

namespace ssar {

/// Radius of the outer sphere: r_min + (age/age_max)(r_max - r_min), with
/// r_min = 0.15 * min(dims)/2 and r_max = 0.9 * min(dims)/2.
double phantom_radius(double age, double age_max, const std::array<std::size_t, 3>& dims);

/// Synthetic volume whose geometry encodes age. Background 0; a centred sphere
/// of intensity 1 and radius phantom_radius(); a concentric sphere of half that
/// radius with intensity 1 + age/age_max; additive Gaussian noise. The voxel
/// centre (x, y, z) belongs to a sphere when its distance from the grid centre
/// ((X-1)/2, (Y-1)/2, (Z-1)/2) is at most the radius.
Volume generate_phantom(double age, double age_max, const std::array<std::size_t, 3>& dims, double noise_sigma,
                        std::uint64_t seed, const std::string& subject_id = "phantom");

}  // namespace ssar
