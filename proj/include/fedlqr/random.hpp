#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace fedlqr {

using Rng = std::mt19937_64;

// Hierarchical key for deterministic RNG substreams.
//
// A stream is identified by a path of 64-bit labels, e.g.
// (master_seed, round, agent, local_step, trajectory). Engines are seeded
// through std::seed_seq, whose mixing algorithm is fixed by the standard, so
// a given path always yields the same engine state regardless of the order in
// which streams are created.
class StreamKey {
 public:
  StreamKey() = default;
  explicit StreamKey(std::uint64_t seed) { push(seed); }
  StreamKey(std::initializer_list<std::uint64_t> labels) {
    for (auto l : labels) push(l);
  }

  [[nodiscard]] StreamKey child(std::uint64_t label) const {
    StreamKey k = *this;
    k.push(label);
    return k;
  }

  [[nodiscard]] Rng engine() const {
    std::seed_seq seq(words_.begin(), words_.end());
    return Rng(seq);
  }

  [[nodiscard]] const std::vector<std::uint32_t>& words() const {
    return words_;
  }

 private:
  void push(std::uint64_t label) {
    words_.push_back(static_cast<std::uint32_t>(label & 0xffffffffu));
    words_.push_back(static_cast<std::uint32_t>(label >> 32));
  }

  std::vector<std::uint32_t> words_;
};

}  // namespace fedlqr
