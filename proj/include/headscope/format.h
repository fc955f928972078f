#pragma once

#include <string>

namespace headscope {

// Shortest decimal form that round-trips to the same double.
std::string format_double(double v);

}  // namespace headscope
