#include "hskd/rng.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hskd {

double Rng::uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::normal() {
    const double u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::size_t Rng::index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("Rng::index needs n > 0");
    const std::uint64_t bound = static_cast<std::uint64_t>(n);
    // Largest multiple of bound representable; draws above it are rejected.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
    std::uint64_t draw = next_u64();
    while (draw > limit) draw = next_u64();
    return static_cast<std::size_t>(draw % bound);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001B3ull;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index) {
    return splitmix64(splitmix64(base ^ fnv1a64(stream)) + index);
}

}  // namespace hskd
