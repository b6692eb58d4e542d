#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <string_view>

namespace hskd {

// Portable seeded generator. The engine is std::mt19937_64, whose output
// sequence is fixed by the C++ standard; every derived draw below is computed
// here rather than through <random> distributions, which are
// implementation-defined.
//
//   uniform()  = (next_u64() >> 11) * 2^-53                 in [0, 1)
//   normal()   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)          one pair per draw
//   index(n)   = rejection-sampled next_u64() mod n          unbiased in [0, n)
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next_u64() { return engine_(); }
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    double normal();
    std::size_t index(std::size_t n);

private:
    std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t fnv1a64(std::string_view text);

// Independent stream seed for (base seed, stream name, index):
// splitmix64(splitmix64(base ^ fnv1a64(stream)) + index).
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream, std::uint64_t index = 0);

}  // namespace hskd
