#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>

namespace radcap {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Named substreams so data, init, dropout and shuffle randomness can be
// varied independently from one top-level seed.
namespace stream {
inline constexpr std::uint64_t data = 0xd5a61266f0c9392cULL;
inline constexpr std::uint64_t init = 0x8f14e45fceea167aULL;
inline constexpr std::uint64_t dropout = 0x6b43a9b5f7323916ULL;
inline constexpr std::uint64_t shuffle = 0x3c6ef372fe94f82aULL;
} // namespace stream

// mt19937_64 has a bit-exact sequence on every platform; the distribution
// mapping below is hand-rolled because the std distributions are not
// implementation-stable.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : seed_(seed), eng_(seed) {}

    static Rng substream(std::uint64_t seed, std::uint64_t stream_id) {
        return Rng(splitmix64(seed ^ stream_id));
    }
    // Derived generator independent of how much of this one was consumed.
    Rng fork(std::uint64_t salt) const {
        return Rng(splitmix64(seed_ ^ splitmix64(salt)));
    }

    std::uint64_t next_u64() { return eng_(); }

    // [0, 1)
    double uniform() {
        return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
    }
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    double normal() {
        double u1 = 1.0 - uniform(); // (0, 1]
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }

    // [0, n)
    int uniform_int(int n) {
        return static_cast<int>((static_cast<unsigned __int128>(next_u64()) *
                                 static_cast<unsigned __int128>(n)) >> 64);
    }

    template <class It>
    void shuffle(It first, It last) {
        auto n = static_cast<int>(last - first);
        for (int i = n - 1; i > 0; --i) {
            int j = uniform_int(i + 1);
            std::swap(first[i], first[j]);
        }
    }

    template <class C>
    void shuffle(C& container) {
        shuffle(container.begin(), container.end());
    }

private:
    std::uint64_t seed_;
    std::mt19937_64 eng_;
};

} // namespace radcap
