#pragma once

#include <cstdint>
#include <random>
#include <string>

namespace cnsnet {

// Seeded random source. The mt19937_64 engine sequence is pinned by the
// standard; uniform/normal draws are hand-rolled on top of it so a given
// seed produces the same stream on every standard library. Engine state
// round-trips through a string for exact training resume.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Uniform integer in [lo, hi] inclusive.
    int uniform_int(int lo, int hi);
    // Standard normal via Box-Muller (no cached spare, keeps state minimal).
    double normal();

    // Derive an independent child generator; advances this stream.
    Rng fork() { return Rng(next_u64() ^ 0x9e3779b97f4a7c15ull); }

    std::string state_string() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
};

}  // namespace cnsnet
