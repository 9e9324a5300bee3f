#pragma once

#include <cstdint>
#include <vector>

namespace mkcaps {

/// Counter-based deterministic random source. The full generator state is
/// (seed, stream_id, counter), so the same (seed, stream_id) replays the same
/// sequence on every platform and distinct stream_ids give unrelated streams.
class RandomStream {
public:
    RandomStream(std::uint64_t seed, std::uint64_t stream_id);

    std::uint64_t seed() const { return seed_; }
    std::uint64_t stream_id() const { return stream_id_; }
    std::uint64_t counter() const { return counter_; }

    std::uint64_t next_u64();

    /// Uniform in [0, 1) with 53 random bits.
    double next_double();

    double uniform(double lo, double hi);

    /// Standard normal via Box-Muller; consumes two uniform draws.
    double normal();

    /// Uniform integer in [0, n), unbiased. n must be positive.
    std::uint64_t below(std::uint64_t n);

    /// In-place Fisher-Yates shuffle.
    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

    /// Exactly `count` distinct indices drawn from [0, n), in draw order.
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t count);

private:
    std::uint64_t seed_;
    std::uint64_t stream_id_;
    std::uint64_t base_;
    std::uint64_t counter_ = 0;
};

/// Stable seed derivation for per-fold / per-sample substreams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t salt);

} // namespace mkcaps
