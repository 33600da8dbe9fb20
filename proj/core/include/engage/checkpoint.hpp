#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "engage/models.hpp"

namespace engage::models {

/// Binary model checkpoint, little-endian, layout documented in
/// docs/checkpoint-format.md. Throws DataError on malformed input.
std::vector<char> encode_checkpoint(const Network& net);
Network decode_checkpoint(std::span<const char> bytes);

void save_checkpoint(const Network& net, const std::filesystem::path& path);
Network load_checkpoint(const std::filesystem::path& path);

}  // namespace engage::models
