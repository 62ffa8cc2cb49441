#pragma once

#include <string_view>

namespace synthctl {

inline constexpr std::string_view kToolName = "synthctl";
inline constexpr std::string_view kVersion = "0.1.0";

}  // namespace synthctl
