#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace curate {

/// Lowercase hex SHA-256 of the given bytes.
std::string Sha256Hex(std::string_view data);

/// SHA-256 of a file's contents; throws Error(kIoError) if unreadable.
std::string Sha256File(const std::filesystem::path& path);

/// 64-bit seed derived from a string and a base seed. Used wherever a
/// per-item random stream must not depend on processing order.
std::uint64_t DeriveSeed(std::uint64_t base, std::string_view key);

/// Standard base64 (RFC 4648) with padding.
std::string Base64Encode(std::string_view data);

}  // namespace curate
