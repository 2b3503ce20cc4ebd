// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string_view>

namespace nli {

/// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Stable seed for a named sub-stream of `master` (e.g. a grid cell id).
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

/// Stable seed for a numbered sub-stream of `master`.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

} // namespace nli
