#pragma once

namespace bdsdep {

inline constexpr const char* kVersion = "0.1.0";

}  // namespace bdsdep
