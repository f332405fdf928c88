#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace treeseg {

// All numeric work runs in double. The acceptance properties of this library
// (bitwise weight surgery, 1e-9 loss identities, byte-identical reruns) are
// only cheap to guarantee at this precision, and the models here are desk
// scale, not GPU scale.
using real_t = double;

class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
};

#define TS_CHECK(cond, msg)                                                   \
    do {                                                                      \
        if (!(cond)) throw ::treeseg::Error(std::string(msg));                \
    } while (0)

// Single RNG type used everywhere so that a seed pins the whole run.
// Distinct components draw from streams derived with `fork` instead of
// sharing one stream; adding parameters to one module then cannot shift
// the init of another.
class Rng {
public:
    explicit Rng(uint64_t seed) : engine_(seed) {}

    uint64_t next_u64() { return engine_(); }

    real_t uniform(real_t lo, real_t hi) {
        std::uniform_real_distribution<real_t> d(lo, hi);
        return d(engine_);
    }

    real_t normal(real_t mean = 0.0, real_t stddev = 1.0) {
        std::normal_distribution<real_t> d(mean, stddev);
        return d(engine_);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        std::uniform_int_distribution<int64_t> d(lo, hi);
        return d(engine_);
    }

    bool bernoulli(real_t p) {
        std::bernoulli_distribution d(p);
        return d(engine_);
    }

    Rng fork(uint64_t stream) {
        // splitmix64 of (base seed material, stream) keeps forks decorrelated
        uint64_t z = engine_() + 0x9e3779b97f4a7c15ull * (stream + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return Rng(z ^ (z >> 31));
    }

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
};

}  // namespace treeseg
