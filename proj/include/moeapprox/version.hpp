#pragma once

namespace moeapprox {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace moeapprox
