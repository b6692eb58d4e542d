#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hskd/data.hpp"
#include "hskd/losses.hpp"
#include "hskd/nn.hpp"
#include "hskd/optim.hpp"

namespace hskd {

enum class DistillMode { Vanilla, Kd, L2e, ThKd };

std::string to_string(DistillMode mode);
DistillMode parse_distill_mode(const std::string& text);

struct DistillConfig {
    DistillMode mode = DistillMode::Vanilla;
    double alpha = 1.0;
    double beta = 0.05;
    double alpha_th = 1.0;
    double tau = 1.0;
    bool squared_l2e = false;
    OptimizerKind optimizer = OptimizerKind::Adam;
    double lr = 0.01;
    LrSchedule lr_schedule = LrSchedule::Cosine;
    std::size_t epochs = 40;
    std::size_t batch_size = 32;
    std::uint64_t seed = 0;
    bool freeze_student_head = true;

    // Every violated field, formatted "field: reason".
    std::vector<std::string> violations() const;
    void validate() const;

    // Weights actually applied: vanilla drops both distillation terms, kd
    // drops the representation term.
    losses::ObjectiveSettings objective() const;

    bool operator==(const DistillConfig&) const = default;
};

class ConfigError : public std::invalid_argument {
public:
    explicit ConfigError(std::vector<std::string> problems);
    const std::vector<std::string>& problems() const { return problems_; }

private:
    std::vector<std::string> problems_;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EpochRecord {
    std::size_t epoch = 0;
    double ce = 0.0;
    double kd = 0.0;
    double rep = 0.0;
    double total = 0.0;
    double train_acc = 0.0;
    double test_acc = 0.0;
    double mean_angle = 0.0;  // radians
    double msc = 0.0;
};

struct TrainReport {
    std::vector<EpochRecord> epochs;
    double wall_seconds = 0.0;  // not part of the CSV

    static constexpr const char* kCsvHeader =
        "epoch,ce,kd,rep,total,train_acc,test_acc,mean_angle_rad,mean_angle_deg,msc";
    void write_csv(std::ostream& out) const;
    std::string to_csv() const;
};

// Values of one optimizer step, taken before the update.
struct StepRecord {
    std::size_t epoch = 0;  // 1-based
    std::size_t step = 0;   // 0-based, counted over the whole run
    std::size_t batch_size = 0;
    losses::LossBreakdown loss;
    double alpha = 0.0;
    double beta = 0.0;
};

struct TrainOptions {
    // Angle metrics are taken against this model when no teacher is given.
    const ModelBundle* reference = nullptr;
    // Angle and MSC are computed on epochs where (epoch - 1) % k == 0 and on
    // the last epoch, and carried forward otherwise.
    std::size_t metric_every = 1;
    std::function<void(const StepRecord&)> on_step;
};

struct TrainResult {
    ModelBundle student;
    TrainReport report;
};

// Fresh student for `cfg`: th_kd attaches the teacher head (and freezes the
// student's own head when freeze_student_head), and an adapter is added
// whenever the student width differs from the head input of the teacher (or,
// without one, of the reference model used for angle metrics).
ModelBundle prepare_student(const DistillConfig& cfg, const Architecture& student_arch, const ModelBundle* teacher,
                            const ModelBundle* reference = nullptr);

TrainResult train_student(const DistillConfig& cfg, const LabeledDataset& data, const ModelBundle* teacher,
                          const Architecture& student_arch, const TrainOptions& options = {});
// Trains an already assembled student in place of a fresh one.
TrainResult train_bundle(const DistillConfig& cfg, const LabeledDataset& data, const ModelBundle* teacher,
                         ModelBundle student, const TrainOptions& options = {});

// (1 - a) p_s + a p_s_th
Tensor combine_head_predictions(const Tensor& p_s, const Tensor& p_s_th, double alpha_th);

// Class probabilities used for accuracy: the combined heads when an aux head
// is attached, the main head otherwise.
Tensor predict_probs(const ModelBundle& bundle, const Tensor& x, double alpha_th);

struct ShkdConfig {
    DistillConfig initial;  // step I0: vanilla, or kd from a pretrained teacher
    DistillConfig teacher;  // step I1: CE only, head frozen at theta_s
    DistillConfig final_student;  // step I2: kd or l2e from the step I1 teacher

    std::vector<std::string> violations(bool has_pretrained_teacher) const;
};

struct ShkdResult {
    ModelBundle initial_student;
    ModelBundle teacher;
    ModelBundle student;
    std::array<TrainReport, 3> reports;
    bool head_chain_ok = false;
};

// Throws before any training when the architectures cannot share a head.
ShkdResult shkd_pipeline(const ShkdConfig& cfg, const LabeledDataset& data, const Architecture& student_arch,
                         const Architecture& teacher_arch, const ModelBundle* pretrained_teacher = nullptr,
                         std::optional<Architecture> final_student_arch = std::nullopt,
                         const TrainOptions& options = {});

struct AblationRow {
    Architecture initial;
    double teacher_test_acc = 0.0;
    double final_student_test_acc = 0.0;
};

std::vector<AblationRow> capacity_ablation(const std::vector<Architecture>& initial_archs,
                                           const Architecture& teacher_arch, const Architecture& final_student_arch,
                                           const LabeledDataset& data, const ShkdConfig& cfg,
                                           const TrainOptions& options = {});

}  // namespace hskd
