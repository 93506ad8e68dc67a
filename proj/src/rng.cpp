#include "redcell/rng.hpp"

#include <cmath>

namespace redcell {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
    x += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = x;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t Rng::next() {
    return splitmix64(state_);
}

std::uint64_t Rng::below(std::uint64_t n) {
    // Rejection sampling to avoid modulo bias.
    const std::uint64_t limit = n * (UINT64_MAX / n);
    std::uint64_t v = next();
    while (v >= limit) {
        v = next();
    }
    return v % n;
}

int Rng::range(int lo, int hi) {
    return lo + static_cast<int>(below(static_cast<std::uint64_t>(hi - lo) + 1));
}

double Rng::uniform01() {
    return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    double u1 = uniform01();
    while (u1 <= 0.0) {
        u1 = uniform01();
    }
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::string_view b) {
    std::uint64_t x = base ^ fnv1a64(a);
    if (!b.empty()) {
        x = x * 0x100000001b3ULL ^ fnv1a64(b);
    }
    // One mixing round so nearby bases land in unrelated streams.
    return splitmix64(x);
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view a, std::uint64_t index) {
    std::uint64_t x = base ^ fnv1a64(a);
    x = x * 0x100000001b3ULL ^ (index + 0x9e3779b97f4a7c15ULL);
    return splitmix64(x);
}

} // namespace redcell
