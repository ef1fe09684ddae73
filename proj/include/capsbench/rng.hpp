#pragma once

#include <cstdint>
#include <random>

#include "capsbench/tensor.hpp"

namespace capsbench {

// All stochastic behavior in the project flows through one seeded engine so
// that a (seed, thread-count) pair pins every result.
class Rng {
  public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    real uniform(real lo, real hi) {
        std::uniform_real_distribution<real> d(lo, hi);
        return d(engine_);
    }
    real normal(real mean, real stddev) {
        std::normal_distribution<real> d(mean, stddev);
        return d(engine_);
    }
    // [0, n)
    int index(int n) {
        std::uniform_int_distribution<int> d(0, n - 1);
        return d(engine_);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        std::shuffle(v.begin(), v.end(), engine_);
    }

    std::mt19937_64& engine() { return engine_; }

  private:
    std::mt19937_64 engine_;
};

inline void fill_uniform(Tensor& t, Rng& rng, real lo, real hi) {
    for (auto& v : t.data) v = rng.uniform(lo, hi);
}
inline void fill_normal(Tensor& t, Rng& rng, real mean, real stddev) {
    for (auto& v : t.data) v = rng.normal(mean, stddev);
}

}  // namespace capsbench
