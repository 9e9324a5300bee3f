#include "mkcaps/random.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "mkcaps/errors.hpp"

namespace mkcaps {
namespace {

constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

// SplitMix64 output function.
std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

} // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt) {
    return mix(mix(seed + kGamma) ^ (salt + kGamma));
}

RandomStream::RandomStream(std::uint64_t seed, std::uint64_t stream_id)
    : seed_(seed), stream_id_(stream_id), base_(derive_seed(seed, stream_id)) {}

std::uint64_t RandomStream::next_u64() {
    ++counter_;
    return mix(base_ + counter_ * kGamma);
}

double RandomStream::next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
    return lo + (hi - lo) * next_double();
}

double RandomStream::normal() {
    const double u1 = 1.0 - next_double(); // (0, 1]
    const double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RandomStream::below(std::uint64_t n) {
    if (n == 0) throw ContractError("RandomStream::below requires n > 0");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

std::vector<std::size_t> RandomStream::sample_without_replacement(std::size_t n, std::size_t count) {
    if (count > n) throw ContractError("cannot sample more indices than available");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    // Partial Fisher-Yates: the first `count` slots end up with the sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::size_t j = i + static_cast<std::size_t>(below(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(count);
    return pool;
}

} // namespace mkcaps
