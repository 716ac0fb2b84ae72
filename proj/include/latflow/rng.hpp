#pragma once

#include <cstdint>
#include <random>

namespace latflow {

/// Deterministic random source. All sampling in the library goes through this
/// class so that one master seed reproduces every byte of every artifact.
/// Distributions are implemented by hand (not std::*_distribution) because the
/// standard leaves those implementation-defined; mt19937_64 itself is pinned
/// by the standard, so streams are identical across compilers.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    std::uint64_t next_u64() { return gen_(); }

    /// Uniform in [0, 1), 53 bits of mantissa.
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
    std::uint64_t uniform_int(std::uint64_t n);

    /// Standard normal via Box-Muller. Caches the second deviate.
    double normal();

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

private:
    std::mt19937_64 gen_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

/// Derives an independent child seed from a base seed and a stream index.
/// splitmix64 finalizer; distinct streams never collide in practice.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

/// FNV-1a over a byte range. Used to fingerprint checkpoints and datasets.
std::uint64_t fnv1a64(const void* data, std::size_t n,
                      std::uint64_t h = 14695981039346656037ull);

/// Lower-case hex string of a 64-bit hash.
std::string hash_hex(std::uint64_t h);

/// FNV-1a over a whole file. Throws IoError when the file cannot be read.
std::uint64_t hash_file(const std::string& path);

} // namespace latflow
