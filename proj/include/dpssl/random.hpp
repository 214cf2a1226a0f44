#pragma once

#include <cstdint>
#include <random>

namespace dpssl {

/// splitmix64 finalizer; used only to derive independent engine seeds.
constexpr std::uint64_t mix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/// Engine for stream `stream` under `seed`.
inline std::mt19937_64 make_stream(std::uint64_t seed, std::uint64_t stream)
{
    return std::mt19937_64(mix64(mix64(seed) ^ mix64(stream + 0x5851f42d4c957f2dULL)));
}

/// Reserved stream ids for non-per-sample draws.
namespace streams {
inline constexpr std::uint64_t kClassMeans = 0xfeed0001ULL;
inline constexpr std::uint64_t kHeadsInit = 0xfeed0002ULL;
inline constexpr std::uint64_t kShuffle = 0xfeed0003ULL;
inline constexpr std::uint64_t kThetaInit = 0xfeed0004ULL;
inline constexpr std::uint64_t kTieBreak = 0xfeed0005ULL;
inline constexpr std::uint64_t kEndModel = 0xfeed0006ULL;
}  // namespace streams

}  // namespace dpssl
