#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace peloton {

inline constexpr std::string_view kToolVersion = "0.1.0";

// SplitMix64 step; used to derive independent RNG seeds from a base seed
// and a stable stream index, so per-agent streams do not depend on
// scheduling order.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

// FNV-1a 64-bit over a byte string, hex-encoded. Stable across platforms;
// used for config hashes embedded in artifacts.
std::string fnv1a_hex(std::string_view bytes);

std::string trim(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);

// Fixed-format floating point ("%.*f"), locale-independent.
std::string format_fixed(double x, int precision);

// Writes content to `path` atomically (write temp file, then rename).
void atomic_write_file(const std::string& path, const std::string& content);

}  // namespace peloton
