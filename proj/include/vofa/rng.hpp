#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string_view>
#include <utility>
#include <vector>

namespace vofa {

// Counter-based deterministic RNG. Every consumer derives its own stream from
// (run_seed, stream_name, index), so data order, model init and shuffles are
// reproducible independently of each other and of call order.
class Rng {
public:
    Rng(uint64_t run_seed, std::string_view stream, uint64_t index = 0) {
        uint64_t h = 0xcbf29ce484222325ull;  // FNV-1a over the stream name
        for (char c : stream) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001b3ull;
        }
        state_ = mix(mix(run_seed) ^ h);
        state_ = mix(state_ ^ (index + 0x9e3779b97f4a7c15ull));
    }

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double next_double() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }

    // uniform in [0, n), unbiased
    uint64_t next_below(uint64_t n) {
        if (n <= 1) return 0;
        const uint64_t limit = ~uint64_t{0} - ~uint64_t{0} % n;
        uint64_t v;
        do {
            v = next_u64();
        } while (v >= limit);
        return v % n;
    }

    bool next_bool() { return (next_u64() & 1u) != 0; }

    // standard normal, Box-Muller with a cached spare
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        double r = std::sqrt(-2.0 * std::log1p(-u1));
        double a = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    static uint64_t mix(uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    uint64_t state_ = 0;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace vofa
