#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace mpt {

/// Lowercase hex SHA-256 digest of `data`.
std::string sha256_hex(std::string_view data);

/// 64-bit FNV-1a; used where a cheap stable hash of an id is enough.
constexpr std::uint64_t fnv1a64(std::string_view data) {
    std::uint64_t hash = 14695981039346656037ULL;
    for (unsigned char c : data) {
        hash ^= c;
        hash *= 1099511628211ULL;
    }
    return hash;
}

}  // namespace mpt
