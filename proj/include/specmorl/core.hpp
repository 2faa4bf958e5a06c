#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>

#include "specmorl/errors.hpp"

namespace specmorl {

using Rng = std::mt19937_64;

inline constexpr int kMaxObjectives = 6;

// Per-objective rewards, each in [0,1]. Fixed capacity so transitions stay
// trivially copyable inside the replay ring.
struct RewardVector {
  std::array<double, kMaxObjectives> values{};
  int size = 0;

  RewardVector() = default;
  RewardVector(std::initializer_list<double> init) {
    if (init.size() > static_cast<std::size_t>(kMaxObjectives))
      throw IndexError("reward vector longer than the objective limit");
    for (double v : init) values[static_cast<std::size_t>(size++)] = v;
  }

  std::span<const double> view() const { return {values.data(), static_cast<std::size_t>(size)}; }
  double operator[](int i) const { return values[static_cast<std::size_t>(i)]; }
  double& operator[](int i) { return values[static_cast<std::size_t>(i)]; }

  friend bool operator==(const RewardVector& a, const RewardVector& b) {
    if (a.size != b.size) return false;
    for (int i = 0; i < a.size; ++i)
      if (a[i] != b[i]) return false;
    return true;
  }
};

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

}  // namespace specmorl
