#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sedeg {

// Deterministic RNG. All distributions are hand-rolled on top of the
// mt19937_64 bit stream so that sequences are identical across standard
// library implementations (std::normal_distribution et al. are not
// portable). Every stochastic component of the project draws from this.
class Rng {
public:
    explicit Rng(uint64_t seed) : seed_(seed), gen_(seed) {}

    uint64_t seed() const { return seed_; }

    uint64_t next_u64() { return gen_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal, Box-Muller with cached second sample
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = 0.0;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    double normal(double mean, double stddev) { return mean + stddev * normal(); }

    // normal clipped by resampling to [-2 std, 2 std]
    double truncated_normal(double stddev) {
        double x = 0.0;
        do {
            x = normal() * stddev;
        } while (x < -2.0 * stddev || x > 2.0 * stddev);
        return x;
    }

    // uniform integer in [0, n), rejection sampled (no modulo bias)
    uint64_t below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t x = 0;
        do {
            x = gen_();
        } while (x >= limit);
        return x % n;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        if (v.size() < 2) return;
        for (size_t i = v.size() - 1; i > 0; --i) {
            const size_t j = static_cast<size_t>(below(i + 1));
            std::swap(v[i], v[j]);
        }
    }

    // k distinct indices from [0, n), order of selection preserved
    std::vector<int> sample_without_replacement(int n, int k) {
        std::vector<int> pool(n);
        for (int i = 0; i < n; ++i) pool[i] = i;
        shuffle(pool);
        if (k < n) pool.resize(k);
        return pool;
    }

    // independent child stream, stable under call order at the parent
    Rng child(uint64_t salt) const {
        return Rng(splitmix64(seed_ ^ splitmix64(salt + 0x9e3779b97f4a7c15ULL)));
    }

    static uint64_t splitmix64(uint64_t x) {
        x += 0x9e3779b97f4a7c15ULL;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

private:
    uint64_t seed_;
    std::mt19937_64 gen_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace sedeg
