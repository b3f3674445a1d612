#pragma once

#include "fbridge/types.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fbridge {

// A reproducible random source addressed by (seed, counters...). Two streams
// with the same address produce the same draws regardless of the order in
// which they are created, so per-block streams can be consumed in any order.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::initializer_list<std::uint64_t> counters = {});

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  Vec normal_vector(Eigen::Index n);

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

std::uint64_t splitmix64(std::uint64_t x);

}  // namespace fbridge
