#pragma once

// Counter-based RNG (Philox 4x32-10). Every random draw in the project flows
// through one of these, keyed by (seed, stream), so runs are reproducible
// bit-for-bit and independent purposes never share a stream.

#include <cmath>
#include <cstdint>
#include <vector>

namespace tryon {

// Stream ids. Keep stable: they are part of the reproducibility contract.
enum class RngStream : uint32_t {
    ParamInit = 1,
    TrainNoise = 2,
    TrainTimestep = 3,
    BatchOrder = 4,
    SampleInit = 5,
    SampleStep = 6,
    SampleBlend = 7,
    Synth = 8,
    Misc = 9,
};

class Philox {
public:
    Philox(uint64_t seed, uint32_t stream, uint64_t start_counter = 0)
        : key0_(static_cast<uint32_t>(seed)),
          key1_(static_cast<uint32_t>(seed >> 32) ^ (0x9E3779B9u * stream)),
          counter_(start_counter) {}

    uint64_t counter() const { return counter_; }
    void set_counter(uint64_t c) {
        counter_ = c;
        have_ = 0;
        has_cached_normal_ = false;
    }

    uint32_t next_u32() {
        if (have_ == 0) {
            block(counter_++, buf_);
            have_ = 4;
        }
        return buf_[4 - have_--];
    }

    // Uniform in (0, 1]; never returns 0 so log() below is safe.
    double next_uniform() {
        return (static_cast<double>(next_u32()) + 1.0) * (1.0 / 4294967296.0);
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * next_uniform(); }

    int uniform_int(int lo, int hi) {  // inclusive range
        uint32_t span = static_cast<uint32_t>(hi - lo + 1);
        return lo + static_cast<int>(next_u32() % span);
    }

    // Box-Muller; caches the second variate.
    double next_normal() {
        if (has_cached_normal_) {
            has_cached_normal_ = false;
            return cached_normal_;
        }
        double u1 = next_uniform();
        double u2 = next_uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        cached_normal_ = r * std::sin(a);
        has_cached_normal_ = true;
        return r * std::cos(a);
    }

    template <typename T>
    void fill_normal(T* dst, size_t n, double scale = 1.0) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(next_normal() * scale);
    }

    template <typename T>
    void fill_uniform(T* dst, size_t n, double lo, double hi) {
        for (size_t i = 0; i < n; ++i) dst[i] = static_cast<T>(uniform(lo, hi));
    }

    // Fisher-Yates over indices 0..n-1.
    std::vector<size_t> permutation(size_t n) {
        std::vector<size_t> p(n);
        for (size_t i = 0; i < n; ++i) p[i] = i;
        for (size_t i = n; i > 1; --i) {
            size_t j = next_u32() % i;
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    static uint32_t mulhi(uint32_t a, uint32_t b) {
        return static_cast<uint32_t>((static_cast<uint64_t>(a) * b) >> 32);
    }

    void block(uint64_t ctr, uint32_t out[4]) const {
        uint32_t c0 = static_cast<uint32_t>(ctr);
        uint32_t c1 = static_cast<uint32_t>(ctr >> 32);
        uint32_t c2 = 0, c3 = 0;
        uint32_t k0 = key0_, k1 = key1_;
        for (int round = 0; round < 10; ++round) {
            uint32_t hi0 = mulhi(0xD2511F53u, c0), lo0 = 0xD2511F53u * c0;
            uint32_t hi1 = mulhi(0xCD9E8D57u, c2), lo1 = 0xCD9E8D57u * c2;
            uint32_t n0 = hi1 ^ c1 ^ k0;
            uint32_t n1 = lo1;
            uint32_t n2 = hi0 ^ c3 ^ k1;
            uint32_t n3 = lo0;
            c0 = n0; c1 = n1; c2 = n2; c3 = n3;
            k0 += 0x9E3779B9u;
            k1 += 0xBB67AE85u;
        }
        out[0] = c0; out[1] = c1; out[2] = c2; out[3] = c3;
    }

    uint32_t key0_, key1_;
    uint64_t counter_ = 0;
    uint32_t buf_[4] = {0, 0, 0, 0};
    int have_ = 0;
    double cached_normal_ = 0.0;
    bool has_cached_normal_ = false;
};

inline Philox make_rng(uint64_t seed, RngStream stream, uint64_t counter = 0) {
    return Philox(seed, static_cast<uint32_t>(stream), counter);
}

}  // namespace tryon
