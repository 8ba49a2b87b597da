#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace blockfed {

// Independent seed streams derived from one master seed. Changing the seed of
// one axis (e.g. partitioning) never perturbs another (e.g. model init).
enum class SeedStream : std::uint64_t {
  Data = 1,
  Split = 2,
  ModelInit = 3,
  Partition = 4,
  ModalityAssign = 5,
  Client = 6,
};

// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

// derive_seed(m, s, i) = mix64(mix64(m ^ mix64(s)) + i). `index` separates
// members of a stream (client id, retry attempt, round).
std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index = 0);
std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index);

// Thin wrapper over mt19937_64 with Boost.Random distributions, whose
// algorithms are fixed in headers and therefore identical on every platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo, double hi);
  double normal(double mean, double stddev);
  double gamma(double shape);
  std::size_t uniform_index(std::size_t n);  // in [0, n)
  std::vector<double> dirichlet(std::size_t k, double alpha);

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }
  template <typename T>
  void shuffle(std::vector<T>& items) {
    shuffle(std::span<T>(items));
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace blockfed
