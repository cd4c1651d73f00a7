#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>

namespace fkb {

using Sha256 = std::array<std::uint8_t, 32>;

Sha256 sha256(std::span<const std::uint8_t> bytes);
Sha256 sha256(std::string_view text);
// Streams the file; throws IoError when it cannot be read.
Sha256 sha256_file(const std::string& path);

std::string to_hex(std::span<const std::uint8_t> bytes);

}  // namespace fkb
