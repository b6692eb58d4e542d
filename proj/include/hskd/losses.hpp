#pragma once

#include <cstddef>
#include <optional>
#include <span>

#include "hskd/autodiff.hpp"
#include "hskd/nn.hpp"
#include "hskd/tensor.hpp"

namespace hskd::losses {

// ---- Plain evaluations over probability / embedding tensors -------------

// Mean over the batch of -log p[i, y_i].
double cross_entropy(const Tensor& probs, std::span<const std::size_t> labels);

// Mean over the batch of KL(p_t || p_s) * tau^2. Probabilities carry no
// temperature information, so tau must be 1 here; use kd_divergence_logits
// for tempered targets.
double kd_divergence(const Tensor& p_teacher, const Tensor& p_student, double tau = 1.0);
double kd_divergence_logits(const Tensor& teacher_logits, const Tensor& student_logits, double tau);

// Mean over the batch of || z_s/|z_s| - z_t/|z_t| ||_2 (squared when asked).
double l2e(const Tensor& z_student, const Tensor& z_teacher, bool squared = false);

// (1 - a) H(p_s, p_t) + a H(p_s^TH, p_t)
double th_kd_divergence(const Tensor& p_s, const Tensor& p_s_th, const Tensor& p_t, double alpha_th);
// (1 - a) CE(p_s, y) + a CE(p_s^TH, y)
double th_kd_cross_entropy(const Tensor& p_s, const Tensor& p_s_th, std::span<const std::size_t> labels,
                           double alpha_th);

// (1 - a) own + a teacher_head, with a checked to lie in [0, 1].
double blend_heads(double own_head, double teacher_head, double alpha_th);

struct LossBreakdown {
    double ce = 0.0;   // CE, or the blended CE' when a teacher head is attached
    double kd = 0.0;   // H, or the blended H'
    double rep = 0.0;  // D
    double total = 0.0;
};

struct LossComponents {
    double ce = 0.0;
    double kd = 0.0;
    double rep = 0.0;
    std::optional<double> ce_teacher_head;
    std::optional<double> kd_teacher_head;
};

// total = CE' + alpha H' + beta D, blending with alpha_th when the teacher-head
// terms are present.
LossBreakdown total_loss(const LossComponents& parts, double alpha, double beta, double alpha_th);

// ---- Differentiable graph builders --------------------------------------

Var cross_entropy(Graph& g, Var logits, std::span<const std::size_t> labels, std::size_t num_classes);
// Teacher logits enter as constants; no gradient reaches the teacher.
Var kd_divergence(Graph& g, const Tensor& teacher_logits, Var student_logits, double tau);
Var l2e(Graph& g, Var z_student, const Tensor& z_teacher, bool squared = false);

struct ObjectiveSettings {
    double alpha = 0.0;
    double beta = 0.0;
    double alpha_th = 0.0;
    double tau = 1.0;
    bool squared_l2e = false;
};

// Per-batch teacher outputs, treated as constants.
struct TeacherTargets {
    Tensor logits;
    Tensor embedding;
};

struct ObjectiveVars {
    Var ce;
    Var kd;
    Var rep;
    Var total;
};

// Builds CE' + alpha H' + beta D for one batch. Without a teacher the kd and
// rep terms are constant zeros; without an aux head CE' = CE and H' = H.
ObjectiveVars build_objective(Graph& g, const BundleVars& student, std::span<const std::size_t> labels,
                              std::size_t num_classes, const TeacherTargets* teacher,
                              const ObjectiveSettings& settings);

}  // namespace hskd::losses
