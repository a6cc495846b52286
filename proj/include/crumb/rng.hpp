#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace crumb {

// Seeded generator with hand-rolled sampling helpers so that every draw is
// reproducible from the recorded engine state alone.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    // uniform double in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // uniform integer in [0, n), n > 0
    std::uint64_t below(std::uint64_t n) { return next_u64() % n; }

    // standard normal via Box-Muller
    float normal();

    // Fisher-Yates, one below() call per swap
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // engine state as text, for checkpoint/resume
    std::string save_state() const;
    void restore_state(const std::string& state);

  private:
    std::mt19937_64 gen_;
};

}  // namespace crumb
