#pragma once

#include <cstdint>

namespace ctcloud {

/// Deterministic 64-bit seed for the random stream identified by
/// (base, a, b). Distinct tags give statistically independent streams.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);

}  // namespace ctcloud
