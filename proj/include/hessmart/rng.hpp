#pragma once

#include <cmath>
#include <cstdint>

namespace hessmart {

/// Counter-based generator: every draw is a pure hash of
/// (seed, stream, item, counter), so parallel draws are order-independent
/// and runs are reproducible bit-for-bit.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t bits(std::uint64_t stream, std::uint64_t item, std::uint64_t counter) const
    {
        std::uint64_t h = seed_ + 0x9e3779b97f4a7c15ULL;
        h = mix(h ^ stream);
        h = mix(h ^ item);
        h = mix(h ^ counter);
        return mix(h);
    }

    /// Uniform in (0, 1].
    double uniform(std::uint64_t stream, std::uint64_t item, std::uint64_t counter) const
    {
        return (static_cast<double>(bits(stream, item, counter) >> 11) + 1.0) * 0x1.0p-53;
    }

    /// Standard normal via Box-Muller on counters (2c, 2c+1).
    double normal(std::uint64_t stream, std::uint64_t item, std::uint64_t counter) const
    {
        const double u1 = uniform(stream, item, 2 * counter);
        const double u2 = uniform(stream, item, 2 * counter + 1);
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

private:
    static std::uint64_t mix(std::uint64_t x)
    {
        x ^= x >> 30;
        x *= 0xbf58476d1ce4e5b9ULL;
        x ^= x >> 27;
        x *= 0x94d049bb133111ebULL;
        x ^= x >> 31;
        return x;
    }

    std::uint64_t seed_;
};

}  // namespace hessmart
