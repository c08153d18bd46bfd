#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace unlearn::rng {

using Engine = std::mt19937_64;

/// splitmix64 finalizer; bijective on 64-bit words.
std::uint64_t mix(std::uint64_t x);

/// Seed for a named random stream ("train", "shadow-1", "attack", ...).
/// Streams are independent of each other, so adding a pipeline stage never
/// perturbs the draws of an existing one.
std::uint64_t derive_stream(std::uint64_t master_seed, std::string_view stream);

Engine make_engine(std::uint64_t seed);

/// Stream name helper, e.g. stream_name("shadow", 2) == "shadow-2".
std::string stream_name(std::string_view base, int index);

}  // namespace unlearn::rng
