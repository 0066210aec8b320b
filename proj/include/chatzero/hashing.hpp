#pragma once

#include <string>
#include <cstdint>
#include <string_view>

namespace chatzero {

std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

// Stable 64-bit hash (FNV-1a), used to derive per-example seeds.
std::uint64_t stable_hash(std::string_view bytes);

}  // namespace chatzero
