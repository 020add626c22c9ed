#pragma once

#include <cstdint>
#include <limits>
#include <string_view>

namespace dilute {

// SplitMix64 finalizer.
inline constexpr std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline constexpr std::uint64_t hash_label(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Counter-based stream: the i-th draw is a pure function of (key, i), so
/// results never depend on how tasks are scheduled.
class StreamRng {
public:
    using result_type = std::uint64_t;

    StreamRng(std::uint64_t seed, std::string_view module, std::uint64_t task)
        : key_(mix64(mix64(seed) ^ hash_label(module)) ^ mix64(task + 0x632be59bd9b4e019ULL)) {}

    StreamRng(std::uint64_t seed, std::string_view module, std::string_view task)
        : StreamRng(seed, module, hash_label(task)) {}

    explicit StreamRng(std::uint64_t key) : key_(mix64(key)) {}

    static constexpr result_type min() { return 0; }
    static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

    result_type operator()() { return mix64(key_ ^ mix64(counter_++)); }

    /// Uniform in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Uniform integer in [0, n).
    std::uint64_t below(std::uint64_t n) {
        // Lemire's multiply-shift with rejection.
        std::uint64_t x = (*this)();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto low = static_cast<std::uint64_t>(m);
        if (low < n) {
            std::uint64_t t = (0 - n) % n;
            while (low < t) {
                x = (*this)();
                m = static_cast<__uint128_t>(x) * n;
                low = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    StreamRng substream(std::uint64_t task) const { return StreamRng(key_ ^ mix64(task ^ 0xa0761d6478bd642fULL)); }

    std::uint64_t counter() const { return counter_; }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
};

}  // namespace dilute
