#include "blockfed/rng.hpp"

#include <boost/random/gamma_distribution.hpp>
#include <boost/random/normal_distribution.hpp>
#include <boost/random/uniform_int_distribution.hpp>
#include <boost/random/uniform_real_distribution.hpp>

namespace blockfed {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, SeedStream stream, std::uint64_t index) {
  return derive_seed(mix64(master ^ mix64(static_cast<std::uint64_t>(stream))), index);
}

std::uint64_t derive_seed(std::uint64_t parent, std::uint64_t index) { return mix64(mix64(parent) + index); }

double Rng::uniform(double lo, double hi) {
  return boost::random::uniform_real_distribution<double>(lo, hi)(engine_);
}

double Rng::normal(double mean, double stddev) {
  return boost::random::normal_distribution<double>(mean, stddev)(engine_);
}

double Rng::gamma(double shape) { return boost::random::gamma_distribution<double>(shape, 1.0)(engine_); }

std::size_t Rng::uniform_index(std::size_t n) {
  return boost::random::uniform_int_distribution<std::size_t>(0, n - 1)(engine_);
}

std::vector<double> Rng::dirichlet(std::size_t k, double alpha) {
  std::vector<double> p(k);
  double total = 0.0;
  for (auto& v : p) {
    v = gamma(alpha);
    total += v;
  }
  for (auto& v : p) v /= total;
  return p;
}

}  // namespace blockfed
