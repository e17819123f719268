#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

namespace fust {

// splitmix64 finalizer
constexpr std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Order-sensitive hash of a key tuple, used to derive independent streams.
constexpr std::uint64_t stream_key(std::initializer_list<std::uint64_t> parts) {
    std::uint64_t h = 0x51ed270b27f0b5a3ULL;
    for (std::uint64_t p : parts) h = mix64(h ^ mix64(p));
    return h;
}

using Rng = std::mt19937_64;

inline Rng keyed_rng(std::initializer_list<std::uint64_t> parts) {
    return Rng(stream_key(parts));
}

// Stream tags so keyed streams of different purposes never collide.
enum class Stream : std::uint64_t {
    init = 1,
    shuffle = 2,
    noise = 3,
    template_ = 4,
    mask = 5,
    inject = 6,
    split = 7,
    probe = 8,
};

inline std::uint64_t tag(Stream s) { return static_cast<std::uint64_t>(s); }

} // namespace fust


namespace fust {

// FNV-1a; stable across platforms, used to key streams by names.
constexpr std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace fust
