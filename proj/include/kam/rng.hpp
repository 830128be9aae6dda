#ifndef KAM_RNG_HPP
#define KAM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <vector>

namespace kam {

/// splitmix64 stream. Hand-rolled so sequences are identical on every
/// platform and toolchain (std distributions are not portable).
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    /// Uniform in [0, 1).
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller.
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    /// Uniform integer in [0, n).
    uint64_t uniform_int(uint64_t n) {
        // modulo bias negligible for n << 2^64; acceptable here
        return next_u64() % n;
    }

    template <class V>
    void shuffle(V& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = uniform_int(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    /// Deterministic per-stream subseed, e.g. per CV fold.
    static uint64_t subseed(uint64_t master, uint64_t stream) {
        Rng r(master ^ (0x632be59bd9b4e019ull * (stream + 1)));
        return r.next_u64();
    }

private:
    uint64_t state_;
    double spare_ = 0.0;
    bool have_spare_ = false;
};

} // namespace kam

#endif
