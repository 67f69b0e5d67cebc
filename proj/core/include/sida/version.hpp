#pragma once

namespace sida {

inline constexpr const char* kArtifactVersion = "0.1.0";

}  // namespace sida
