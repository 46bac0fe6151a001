#pragma once

// 64-bit FNV-1a, used for manifest file hashes and determinism checks.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>

namespace fseg {

inline constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
inline constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

[[nodiscard]] std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes, std::uint64_t h = kFnvOffset);
[[nodiscard]] std::uint64_t fnv1a64(std::string_view s, std::uint64_t h = kFnvOffset);
// Throws std::runtime_error if the file cannot be read.
[[nodiscard]] std::uint64_t hash_file(const std::filesystem::path& path);
[[nodiscard]] std::string hex64(std::uint64_t h);

}  // namespace fseg
