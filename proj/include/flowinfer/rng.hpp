#pragma once

#include <cstdint>
#include <random>

namespace flowinfer {

// Seedable 64-bit generator with deterministic child streams. Same seed,
// same build -> bit-identical draw sequence. Gaussians come from Box-Muller
// so the stream does not depend on the standard library's distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed);

    std::uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform();
    // uniform in (0, 1]
    double uniform_pos();
    // standard normal via Box-Muller (pairs; second value cached)
    double normal();
    // uniform integer in [lo, hi] inclusive
    int uniform_int(int lo, int hi);

    // Independent child stream. Derived from this generator's seed and the
    // stream id only; does not advance the parent.
    Rng split(std::uint64_t stream) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::mt19937_64 gen_;
    bool have_cached_ = false;
    double cached_ = 0.0;
};

}  // namespace flowinfer
