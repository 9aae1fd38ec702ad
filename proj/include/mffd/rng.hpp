#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace mffd {

/// splitmix64 finalizer; used to derive substream seeds and content hashes.
std::uint64_t mix64(std::uint64_t x) noexcept;

/// FNV-1a over raw bytes.
std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t basis = 0xcbf29ce484222325ULL) noexcept;

/// Seeded 64-bit generator with platform-stable sampling.
///
/// std::mt19937_64 is fully specified by the standard, the <random>
/// distributions are not, so every draw here maps raw 64-bit words to values
/// with explicit arithmetic. Named substreams give independent, reproducible
/// sequences for separate consumers (init, dropout, shuffling, noise).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), engine_(mix64(seed)) {}

    std::uint64_t seed() const noexcept { return seed_; }

    Rng substream(std::string_view name) const;
    Rng substream(std::uint64_t index) const;

    std::uint64_t next_u64() { return engine_(); }
    /// Uniform in [0, 1) with 53 bits of mantissa.
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer in [0, n), rejection-sampled (no modulo bias).
    std::uint64_t below(std::uint64_t n);
    /// Standard normal via Box-Muller; the second variate is cached.
    double normal();

private:
    std::uint64_t seed_;
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace mffd
