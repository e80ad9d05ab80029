#pragma once

#include <string>

#include "slidenav/pyramid.hpp"

namespace slidenav {

/// Directory layout: manifest.json + level_<m>.png (8-bit RGB) +
/// nav_<m>.png (16-bit grayscale, value/65535) + tumor.png (8-bit, 0/255).
void save_pyramid(const MagnificationPyramid& p, const std::string& dir);

/// Validates the manifest against the files; throws ManifestError /
/// DimensionMismatchError / ValueRangeError on inconsistencies.
MagnificationPyramid load_pyramid(const std::string& dir);

}  // namespace slidenav
