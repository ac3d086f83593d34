#include "weft/rng.hpp"

#include <cmath>
#include <numbers>

namespace weft {

namespace {
constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;
}

// SplitMix64 finalizer.
std::uint64_t mix64(std::uint64_t x) noexcept {
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}

std::uint64_t RandomStream::next_u64() noexcept {
    const std::uint64_t c = counter_++;
    return mix64(mix64(key_ + kGolden * (c + 1)) ^ key_);
}

double RandomStream::uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t RandomStream::below(std::uint64_t n) noexcept {
    // Lemire's multiply-shift with rejection.
    std::uint64_t x = next_u64();
    __uint128_t m = static_cast<__uint128_t>(x) * n;
    auto low = static_cast<std::uint64_t>(m);
    if (low < n) {
        const std::uint64_t threshold = (0 - n) % n;
        while (low < threshold) {
            x = next_u64();
            m = static_cast<__uint128_t>(x) * n;
            low = static_cast<std::uint64_t>(m);
        }
    }
    return static_cast<std::uint64_t>(m >> 64);
}

double RandomStream::normal() noexcept {
    // Box-Muller, one variate per call so the draw count is fixed.
    double u1 = uniform();
    while (u1 <= 0.0) {
        u1 = uniform();
    }
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

RandomStream RandomStream::substream(std::string_view name) const noexcept {
    // FNV-1a over the name, folded into the key.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : name) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return RandomStream(mix64(key_ ^ mix64(h + 0x6e616d65ULL)));
}

RandomStream RandomStream::substream(std::uint64_t index) const noexcept {
    return RandomStream(mix64(key_ + mix64(index ^ 0x1d8e4e27c47d124fULL) * kGolden));
}

}  // namespace weft
