#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hskd/tensor.hpp"

namespace hskd {

enum class Split : std::uint8_t { Train, Test };

enum class SyntheticKind { GaussianBlobs, ConcentricRings };

std::string to_string(SyntheticKind kind);
// Accepts "gaussian_blobs"/"blobs" and "concentric_rings"/"rings".
SyntheticKind parse_synthetic_kind(const std::string& text);

inline constexpr double kDefaultTestFraction = 0.2;

struct SyntheticSpec {
    SyntheticKind kind = SyntheticKind::GaussianBlobs;
    std::size_t num_classes = 2;
    std::size_t dim = 2;
    std::size_t samples_per_class = 100;
    double noise_std = 0.1;
    std::uint64_t seed = 0;
    double test_fraction = kDefaultTestFraction;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class LabeledDataset {
public:
    LabeledDataset() = default;
    // `labels` must already be contiguous 0..C-1; `label_values[c]` is the
    // original label of class c. Every sample starts in the train split.
    LabeledDataset(Tensor features, std::vector<std::size_t> labels, std::vector<long long> label_values);

    const Tensor& features() const { return features_; }
    const std::vector<std::size_t>& labels() const { return labels_; }
    const std::vector<Split>& splits() const { return splits_; }
    const std::vector<long long>& label_values() const { return label_values_; }

    std::size_t size() const { return labels_.size(); }
    std::size_t dim() const { return features_.cols(); }
    std::size_t num_classes() const { return label_values_.size(); }

    std::vector<std::size_t> indices(Split split) const;
    Tensor features_of(std::span<const std::size_t> indices) const { return features_.gather_rows(indices); }
    std::vector<std::size_t> labels_of(std::span<const std::size_t> indices) const;

    // Stratified per-class split: each class sends round(n_c * test_fraction)
    // samples (at least one, at most n_c - 1) to the test split.
    void assign_split(std::uint64_t seed, double test_fraction = kDefaultTestFraction);

private:
    Tensor features_;
    std::vector<std::size_t> labels_;
    std::vector<Split> splits_;
    std::vector<long long> label_values_;
};

// Every bad field, formatted "field: reason".
std::vector<std::string> violations(const SyntheticSpec& spec);
// Throws std::invalid_argument naming the first bad field.
void validate(const SyntheticSpec& spec);

// Class-major samples; the split is drawn from a stream independent of generation.
LabeledDataset generate(const SyntheticSpec& spec);

// Header "f0,...,f{d-1},label". Labels are remapped to 0..C-1 in ascending
// order of their original values.
LabeledDataset load_csv(const std::filesystem::path& path, std::uint64_t split_seed,
                        double test_fraction = kDefaultTestFraction);
LabeledDataset parse_csv(std::istream& in, std::uint64_t split_seed, double test_fraction = kDefaultTestFraction);

// Writes original label values so load_csv(write_csv(d)) reproduces d.
void write_csv(const LabeledDataset& data, std::ostream& out);
void write_csv(const LabeledDataset& data, const std::filesystem::path& path);

// Seeded permutation of the split's indices cut into batches; the last
// partial batch is kept.
std::vector<std::vector<std::size_t>> batches(const LabeledDataset& data, Split split, std::size_t batch_size,
                                              std::uint64_t epoch_seed);

}  // namespace hskd
