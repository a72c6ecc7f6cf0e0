#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>
#include <vector>

namespace poseformer {

/// Serializable position of an Rng stream.
struct RngState {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

/// Counter-based random stream. Each stream is keyed by (run seed, purpose tag,
/// index) so that adding a new consumer never shifts the draws of another.
/// The full state is two integers, which keeps checkpoints exact.
class Rng {
 public:
  Rng(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0);
  explicit Rng(RngState state) : state_(state) {}

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal (Box-Muller, two draws per sample).
  double normal();
  /// Normal with standard deviation `stddev`, redrawn until |x| <= bound * stddev.
  double truncated_normal(double stddev, double bound = 2.0);
  /// Uniform integer in [0, n).
  std::size_t below(std::size_t n);
  bool bernoulli(double p) { return uniform() < p; }

  RngState state() const { return state_; }

 private:
  RngState state_;
};

std::uint64_t splitmix64(std::uint64_t x);

/// In-place Fisher-Yates shuffle driven by `rng`; identical across platforms.
template <typename V>
void shuffle(std::vector<V>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::size_t j = rng.below(i);
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace poseformer
