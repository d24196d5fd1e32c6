#pragma once

#include <filesystem>

#include "pathcons/adam.hpp"

namespace pathcons {

/// Parameter checkpoint, little-endian:
///   magic "PFCHKPT1" (8 bytes), parameter count (u64), then per parameter
///   in name order: name length (u32), name bytes, rank (u32),
///   shape entries (u32 each), payload (64-bit floats, row-major).
void write_checkpoint(const Parameters& params, const std::filesystem::path& path);

/// Throws UsageError when the file is missing, ConfigError on bad layout.
Parameters read_checkpoint(const std::filesystem::path& path);

}  // namespace pathcons
