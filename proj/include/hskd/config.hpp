#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hskd/data.hpp"
#include "hskd/nn.hpp"
#include "hskd/pipeline.hpp"

namespace hskd {

inline constexpr int kConfigVersion = 1;

// Backbone widths only; input and class counts come from the data.
struct ArchSpec {
    std::vector<std::size_t> hidden;
    std::size_t embedding_dim = 0;

    Architecture resolve(std::size_t input_dim, std::size_t num_classes) const;
    bool operator==(const ArchSpec&) const = default;
};

enum class TrainRole { Student, Teacher };

struct ExperimentConfig {
    // Exactly one of the two data sources is set.
    std::optional<SyntheticSpec> synthetic;
    std::optional<std::string> csv_path;
    std::uint64_t split_seed = 0;  // csv only; synthetic data uses its own seed
    double test_fraction = kDefaultTestFraction;

    ArchSpec teacher_arch{{128, 128}, 16};
    ArchSpec student_arch{{8}, 8};
    std::optional<ArchSpec> final_student_arch;

    DistillConfig training;
    TrainRole train_role = TrainRole::Student;
    std::optional<std::string> teacher_checkpoint;
    std::optional<ShkdConfig> shkd;
    std::vector<std::size_t> ablation_widths;
    std::optional<std::string> analyze_teacher;
    std::optional<std::string> analyze_student;

    std::string output_dir = "out";
    std::size_t metric_every = 1;
    std::vector<std::uint64_t> seeds;  // empty: just training.seed

    // Every problem with the config, formatted "field: reason".
    std::vector<std::string> violations() const;
    // Seeds to run, in order.
    std::vector<std::uint64_t> run_seeds() const;
    // Sets every training seed (all phases) to `seed` and runs only it.
    void override_seed(std::uint64_t seed);

    bool operator==(const ExperimentConfig&) const;
};

// Text form is JSON with a "version" field. Parsing collects every problem it
// finds (unknown keys, wrong types, out-of-range values) and throws
// ConfigError listing them all.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string dump_config(const ExperimentConfig& cfg);

// FNV-1a 64 of the canonical dump, as 16 lowercase hex digits.
std::string config_hash(const ExperimentConfig& cfg);

// Loads or generates the dataset the config describes.
LabeledDataset load_data(const ExperimentConfig& cfg);

}  // namespace hskd
