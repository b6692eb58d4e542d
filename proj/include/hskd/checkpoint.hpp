#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>

#include "hskd/nn.hpp"

namespace hskd {

// File layout, all integers little-endian:
//   "HSKDCKPT"  u32 version
//   u64 n, n bytes: architecture JSON
//   u64 n, n bytes: provenance JSON
//   u64 tensor count, then per tensor
//     u64 n, n bytes name; u8 trainable; u32 rank; rank x u64 dims;
//     numel x f64 (IEEE-754, row-major)
inline constexpr char kCheckpointMagic[8] = {'H', 'S', 'K', 'D', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Provenance {
    std::string config_hash;  // 16 hex digits
    std::string phase;        // e.g. "train", "shkd-step-I1"

    bool operator==(const Provenance&) const = default;
};

struct Checkpoint {
    ModelBundle bundle;
    Provenance provenance;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

void save_checkpoint(const ModelBundle& bundle, const Provenance& provenance, std::ostream& out);
void save_checkpoint(const ModelBundle& bundle, const Provenance& provenance, const std::filesystem::path& path);

Checkpoint load_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

// Throws CheckpointError naming both descriptions when the stored backbone
// and classifier sizes differ from `expected`.
void expect_architecture(const Checkpoint& ckpt, const Architecture& expected, const std::string& what);

}  // namespace hskd
