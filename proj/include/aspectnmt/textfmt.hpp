#pragma once

#include <string>

namespace aspectnmt {

// Shortest decimal string that parses back to exactly the same double; keeps
// config echoes byte-stable across save/load cycles.
std::string format_double(double value);

// Fixed decimal places with printf's rounding (nearest, ties to even).
std::string format_fixed(double value, int decimals);

} // namespace aspectnmt
