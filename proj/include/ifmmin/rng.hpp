#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace ifmmin {

// Counter-based generator: the n-th draw of a stream is a pure function of
// (seed, stream name, n). Separate purposes (init, dropout, shuffling,
// condition sampling) use separate named streams so that changing how much
// one consumer draws never shifts another consumer's sequence.
class Rng {
 public:
  using result_type = std::uint64_t;

  Rng(std::uint64_t seed, std::string_view stream);

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  // Uniform integer on [0, n).
  std::size_t below(std::size_t n);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

  // A child stream derived from this stream's key.
  Rng fork(std::string_view name) const;

 private:
  Rng(std::uint64_t key) : key_(key) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t hash_string(std::string_view text);
std::uint64_t mix64(std::uint64_t x);

template <class T>
void shuffle(std::vector<T>& items, Rng& rng) {
  for (std::size_t i = items.size(); i > 1; --i) {
    std::swap(items[i - 1], items[rng.below(i)]);
  }
}

}  // namespace ifmmin
