#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>

#include "repaint_lab/image.hpp"

namespace repaint_lab {

using Rng = std::mt19937_64;

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Stable 64-bit tag for a string (FNV-1a), used to fold names into seeds.
inline std::uint64_t seed_tag(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derives an independent stream seed from a master seed and a job path.
/// Depends only on its arguments, never on scheduling order.
inline std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
  std::uint64_t h = detail::splitmix64(master);
  for (auto p : path) h = detail::splitmix64(h ^ detail::splitmix64(p));
  return h;
}

inline Image standard_normal_image(std::size_t width, std::size_t height, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Image out(width, height);
  for (auto& v : out.pixels()) v = n01(rng);
  return out;
}

}  // namespace repaint_lab
