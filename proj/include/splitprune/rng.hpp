#pragma once

#include <cstdint>
#include <random>

namespace splitprune {

using Rng = std::mt19937_64;

// Independent random streams are keyed by what they are used for, so that
// e.g. attack noise never shifts the data shuffle when a config changes.
enum class StreamPurpose : std::uint64_t {
    init = 1,
    shuffle = 2,
    train_noise = 3,
    attack = 4,
    eval_attack = 5,
    split = 6,
    probe = 7,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Counter-based seed: a pure function of (master, purpose, a, b).
inline std::uint64_t derive_seed(std::uint64_t master, StreamPurpose purpose, std::uint64_t a = 0,
                                 std::uint64_t b = 0) {
    std::uint64_t h = splitmix64(master);
    h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
    h = splitmix64(h ^ a);
    return splitmix64(h ^ (b * 0xd6e8feb86659fd93ULL));
}

inline Rng make_rng(std::uint64_t master, StreamPurpose purpose, std::uint64_t a = 0, std::uint64_t b = 0) {
    return Rng(derive_seed(master, purpose, a, b));
}

}  // namespace splitprune
