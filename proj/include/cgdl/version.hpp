#pragma once

namespace cgdl {

inline constexpr const char* kToolName = "cgdl";
inline constexpr const char* kToolVersion = "0.1.0";

// Bumped whenever the checkpoint container layout changes.
inline constexpr unsigned kCheckpointFormatVersion = 1;

}  // namespace cgdl
