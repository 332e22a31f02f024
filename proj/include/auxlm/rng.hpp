#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace auxlm {

// FNV-1a, used for stream tags and vocab hashing.
constexpr uint64_t fnv1a64(std::string_view s) {
    uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

// SplitMix64 output function.
constexpr uint64_t mix64(uint64_t z) {
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

constexpr uint64_t kGolden = 0x9e3779b97f4a7c15ull;

constexpr uint64_t derive_key(uint64_t key, uint64_t a) {
    return mix64((key ^ a) + kGolden);
}
constexpr uint64_t derive_key(uint64_t key, uint64_t a, uint64_t b) {
    return derive_key(derive_key(key, a), b);
}
constexpr uint64_t derive_key(uint64_t key, uint64_t a, uint64_t b, uint64_t c) {
    return derive_key(derive_key(key, a, b), c);
}

// Counter-based stream: the key names the stream, the counter walks it.
// Same (key, draw index) gives the same value on any thread, in any order.
class StreamRng {
  public:
    explicit StreamRng(uint64_t key) : key_(key) {}

    uint64_t next_u64() {
        counter_ += kGolden;
        return mix64(key_ + counter_);
    }

    // [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    bool bernoulli(double p) { return next_double() < p; }

    // [0, n); n > 0
    uint64_t next_below(uint64_t n) { return next_u64() % n; }

    // Box-Muller, one value per pair of draws.
    double next_gaussian() {
        double u1 = next_double();
        double u2 = next_double();
        if (u1 <= 0.0) u1 = 0x1.0p-53;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    uint64_t key_;
    uint64_t counter_ = 0;
};

}  // namespace auxlm
