#pragma once

#include <string>

namespace ssar {

/// Shortest decimal text that parses back to the same double.
std::string format_shortest(double value);
/// Shortest round-trip text of a float (used for predictions).
std::string format_shortest(float value);
/// Fixed-point text with `digits` decimals.
std::string format_fixed(double value, int digits);

}  // namespace ssar
