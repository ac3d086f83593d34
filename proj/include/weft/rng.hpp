#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace weft {

// Counter-based random stream. The i-th draw is a pure function of
// (key, i), so a stream can be re-created from its key and position and
// sub-streams can be handed to independent workers without coordination.
class RandomStream {
public:
    using result_type = std::uint64_t;

    explicit RandomStream(std::uint64_t key = 0, std::uint64_t counter = 0) noexcept
        : key_(key), counter_(counter) {}

    std::uint64_t next_u64() noexcept;

    // Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }
    // Uniform integer in [0, n); n > 0.
    std::uint64_t below(std::uint64_t n) noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }
    double normal() noexcept;

    // Independent child streams. Children never share draws with the parent.
    RandomStream substream(std::string_view name) const noexcept;
    RandomStream substream(std::uint64_t index) const noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    // UniformRandomBitGenerator, so std::shuffle and friends accept it.
    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return std::numeric_limits<result_type>::max(); }
    result_type operator()() noexcept { return next_u64(); }

private:
    std::uint64_t key_;
    std::uint64_t counter_;
};

std::uint64_t mix64(std::uint64_t x) noexcept;

// Root stream for a run; named sub-streams ("data", "masking", "init",
// "decode") are derived from it.
inline RandomStream root_stream(std::uint64_t seed) noexcept {
    return RandomStream(mix64(seed ^ 0x5745465452554e31ULL));
}

}  // namespace weft
