#pragma once

#include <cstdint>
#include <string_view>

namespace redcell {

// Deterministic, platform-independent PRNG. std::uniform_* distributions are
// implementation-defined, so all sampling goes through this type to keep
// artifacts byte-identical across toolchains.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next();

    // Unbiased integer in [0, n), n >= 1.
    std::uint64_t below(std::uint64_t n);

    // Integer in [lo, hi] inclusive.
    int range(int lo, int hi);

    // Uniform in [0, 1).
    double uniform01();

    // Standard normal via Box-Muller (one value per call, no caching).
    double normal();

private:
    std::uint64_t state_;
};

std::uint64_t fnv1a64(std::string_view s);

// Derives an independent seed substream from a base seed and a label path,
// e.g. derive_seed(seed, run_id, "stage1"). Adding a new label never perturbs
// streams derived under other labels.
std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b = {});
std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::uint64_t index);

} // namespace redcell
