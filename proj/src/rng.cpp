#include "ivf/rng.hpp"

#include <cmath>

namespace ivf {

namespace {
constexpr double kPi = 3.14159265358979323846;

uint64_t splitmix64(uint64_t& state) {
    uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}
}  // namespace

uint64_t Rng::next_u64() { return splitmix64(state_); }

double Rng::uniform01() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

uint64_t Rng::uniform_int(uint64_t n) {
    if (n == 0) return 0;
    // Rejection over the top range keeps the draw unbiased.
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
        x = next_u64();
    } while (x >= limit);
    return x % n;
}

double Rng::normal() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 1e-300) u1 = uniform01();
    double u2 = uniform01();
    double r = std::sqrt(-2.0 * std::log(u1));
    spare_ = r * std::sin(2.0 * kPi * u2);
    has_spare_ = true;
    return r * std::cos(2.0 * kPi * u2);
}

double Rng::truncated_normal(double sigma) {
    double x;
    do {
        x = normal() * sigma;
    } while (std::abs(x) > 2.0 * sigma);
    return x;
}

uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b, uint64_t c) {
    uint64_t s = seed;
    splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ULL;
    splitmix64(s);
    s ^= b + 0xbf58476d1ce4e5b9ULL;
    splitmix64(s);
    s ^= c + 0x94d049bb133111ebULL;
    return splitmix64(s);
}

}  // namespace ivf
