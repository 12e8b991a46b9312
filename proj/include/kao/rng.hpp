#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>

namespace kao {

/// Stream identifiers used with Rng::substream. Every consumer of randomness
/// draws from its own sub-stream so adding a consumer never shifts another's
/// draws.
namespace stream_id {
inline constexpr std::uint64_t observation_noise = 0;
inline constexpr std::uint64_t state_noise = 1;
inline constexpr std::uint64_t initial_state = 2;
inline constexpr std::uint64_t design = 3;
inline constexpr std::uint64_t restarts = 4;
inline constexpr std::uint64_t replication_base = 1000;  // + replication index
inline constexpr std::uint64_t expert_base = 100000;     // + expert index
}  // namespace stream_id

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seed of sub-stream `id` under `master`.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t id) {
  return splitmix64(splitmix64(master) ^ splitmix64(id + 0x632BE59BD9B4E019ULL));
}

/// Seeded generator with platform-independent uniform and normal draws.
///
/// std::mt19937_64's output sequence is fixed by the standard, but the std
/// distributions are not, so the transforms below are written out: uniforms
/// take the top 53 bits, normals use Box-Muller (both outputs, cached).
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static Rng substream(std::uint64_t master, std::uint64_t id) { return Rng(derive_seed(master, id)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open0() { return 1.0 - uniform(); }

  double normal() {
    if (has_cached_) {
      has_cached_ = false;
      return cached_;
    }
    const double u1 = uniform_open0();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    cached_ = r * std::sin(a);
    has_cached_ = true;
    return r * std::cos(a);
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  double exponential() { return -std::log(uniform_open0()); }

 private:
  std::mt19937_64 engine_;
  double cached_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace kao
