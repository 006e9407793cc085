#pragma once

#include <cstdint>
#include <random>

namespace pcde {

using Rng = std::mt19937_64;

//! One step of the splitmix64 generator; used to derive independent
//! substream seeds from a master seed and an index.
inline std::uint64_t
splitmix64(std::uint64_t x)
{
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

//! Seed of substream `index` under `master`: splitmix64(splitmix64(master) + index).
inline std::uint64_t
derive_seed(std::uint64_t master, std::uint64_t index)
{
  return splitmix64(splitmix64(master) + index);
}

inline Rng
make_rng(std::uint64_t master, std::uint64_t index)
{
  return Rng(derive_seed(master, index));
}

} // namespace pcde
