#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace cloudrm {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// Lower-case hex SHA-256 of a file's contents. Throws IoFailure.
std::string sha256_file(const std::filesystem::path& path);

/// First 64 bits of SHA-256, for keying random streams on content.
std::uint64_t content_key(std::string_view bytes);

}  // namespace cloudrm
