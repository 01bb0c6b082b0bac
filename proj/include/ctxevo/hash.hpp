#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace ctxevo {

// SHA-256 digest. Self-contained so unit ids and fingerprints are
// byte-identical across platforms and standard libraries.
std::array<std::uint8_t, 32> sha256(std::string_view data);

// First `bytes` bytes of the SHA-256 digest as lowercase hex (bytes <= 32).
std::string sha256_hex(std::string_view data, std::size_t bytes = 32);

// FNV-1a, used for cheap label mixing (RNG stream derivation, shuffles).
std::uint64_t fnv1a64(std::string_view data);

}  // namespace ctxevo
