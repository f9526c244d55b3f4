#pragma once

namespace mizero {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace mizero
