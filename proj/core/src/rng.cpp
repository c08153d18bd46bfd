#include "unlearn/rng.hpp"

namespace unlearn::rng {

namespace {

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::uint64_t mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

std::uint64_t derive_stream(std::uint64_t master_seed, std::string_view stream) {
    return mix(mix(master_seed) ^ fnv1a(stream));
}

Engine make_engine(std::uint64_t seed) {
    return Engine(mix(seed));
}

std::string stream_name(std::string_view base, int index) {
    return std::string(base) + "-" + std::to_string(index);
}

}  // namespace unlearn::rng
