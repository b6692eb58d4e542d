#include "hskd/losses.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace hskd::losses {

namespace {

void check_alpha_th(double alpha_th) {
    if (!(alpha_th >= 0.0 && alpha_th <= 1.0)) {
        throw std::invalid_argument("alpha_th must lie in [0, 1], got " + std::to_string(alpha_th));
    }
}

void check_tau(double tau) {
    if (!(tau > 0.0) || !std::isfinite(tau)) throw std::invalid_argument("tau must be > 0");
}

void check_same_shape(const char* what, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(what) + ": shapes " + shape_to_string(a.shape()) + " and " +
                         shape_to_string(b.shape()) + " differ");
    }
}

void check_labels(const Tensor& rows, std::span<const std::size_t> labels) {
    if (labels.size() != rows.rows()) {
        throw ShapeError("got " + std::to_string(labels.size()) + " labels for " + std::to_string(rows.rows()) +
                         " rows");
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= rows.cols()) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                    " outside [0, " + std::to_string(rows.cols()) + ")");
        }
    }
}

double kl_rows(const Tensor& p_t, const Tensor& log_p_t, const Tensor& log_p_s) {
    double total = 0.0;
    for (std::size_t i = 0; i < p_t.rows(); ++i) {
        double row = 0.0;
        for (std::size_t j = 0; j < p_t.cols(); ++j) {
            const double p = p_t.at(i, j);
            if (p > 0.0) row += p * (log_p_t.at(i, j) - log_p_s.at(i, j));
        }
        total += row;
    }
    return total / static_cast<double>(p_t.rows());
}

Tensor normalized_rows(const Tensor& z, const char* which) {
    Tensor out = z;
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double sq = 0.0;
        for (double v : z.row(i)) sq += v * v;
        if (sq == 0.0) {
            throw std::domain_error(std::string("l2e: zero-norm ") + which + " embedding at sample " +
                                    std::to_string(i));
        }
        const double norm = std::sqrt(sq);
        for (auto& v : out.row(i)) v /= norm;
    }
    return out;
}

}  // namespace

double cross_entropy(const Tensor& probs, std::span<const std::size_t> labels) {
    check_labels(probs, labels);
    double total = 0.0;
    for (std::size_t i = 0; i < labels.size(); ++i) total -= std::log(probs.at(i, labels[i]));
    return total / static_cast<double>(labels.size());
}

double kd_divergence(const Tensor& p_teacher, const Tensor& p_student, double tau) {
    check_tau(tau);
    if (tau != 1.0) {
        throw std::invalid_argument("kd_divergence on probabilities needs tau = 1; pass logits for tempered targets");
    }
    check_same_shape("kd_divergence", p_teacher, p_student);
    Tensor log_t = p_teacher, log_s = p_student;
    for (auto& v : log_t.data()) v = std::log(v);
    for (auto& v : log_s.data()) v = std::log(v);
    return kl_rows(p_teacher, log_t, log_s);
}

double kd_divergence_logits(const Tensor& teacher_logits, const Tensor& student_logits, double tau) {
    check_tau(tau);
    check_same_shape("kd_divergence", teacher_logits, student_logits);
    Tensor t = teacher_logits, s = student_logits;
    for (auto& v : t.data()) v /= tau;
    for (auto& v : s.data()) v /= tau;
    const Tensor log_t = log_softmax_rows(t);
    const Tensor log_s = log_softmax_rows(s);
    const Tensor p_t = softmax_rows(t);
    return kl_rows(p_t, log_t, log_s) * tau * tau;
}

double l2e(const Tensor& z_student, const Tensor& z_teacher, bool squared) {
    check_same_shape("l2e", z_student, z_teacher);
    const Tensor a = normalized_rows(z_student, "student");
    const Tensor b = normalized_rows(z_teacher, "teacher");
    double total = 0.0;
    for (std::size_t i = 0; i < a.rows(); ++i) {
        double sq = 0.0;
        for (std::size_t j = 0; j < a.cols(); ++j) {
            const double d = a.at(i, j) - b.at(i, j);
            sq += d * d;
        }
        total += squared ? sq : std::sqrt(sq);
    }
    return total / static_cast<double>(a.rows());
}

double blend_heads(double own_head, double teacher_head, double alpha_th) {
    check_alpha_th(alpha_th);
    return (1.0 - alpha_th) * own_head + alpha_th * teacher_head;
}

double th_kd_divergence(const Tensor& p_s, const Tensor& p_s_th, const Tensor& p_t, double alpha_th) {
    check_alpha_th(alpha_th);
    return blend_heads(kd_divergence(p_t, p_s), kd_divergence(p_t, p_s_th), alpha_th);
}

double th_kd_cross_entropy(const Tensor& p_s, const Tensor& p_s_th, std::span<const std::size_t> labels,
                           double alpha_th) {
    check_alpha_th(alpha_th);
    return blend_heads(cross_entropy(p_s, labels), cross_entropy(p_s_th, labels), alpha_th);
}

LossBreakdown total_loss(const LossComponents& parts, double alpha, double beta, double alpha_th) {
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (!(beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    check_alpha_th(alpha_th);
    LossBreakdown out;
    out.ce = parts.ce_teacher_head ? blend_heads(parts.ce, *parts.ce_teacher_head, alpha_th) : parts.ce;
    out.kd = parts.kd_teacher_head ? blend_heads(parts.kd, *parts.kd_teacher_head, alpha_th) : parts.kd;
    out.rep = parts.rep;
    out.total = out.ce + alpha * out.kd + beta * out.rep;
    return out;
}

Var cross_entropy(Graph& g, Var logits, std::span<const std::size_t> labels, std::size_t num_classes) {
    if (labels.empty()) throw std::invalid_argument("cross_entropy: empty batch");
    Tensor one_hot(Shape{labels.size(), num_classes}, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] >= num_classes) {
            throw std::out_of_range("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                                    " outside [0, " + std::to_string(num_classes) + ")");
        }
        one_hot.at(i, labels[i]) = 1.0;
    }
    const Var picked = g.sum(g.mul(g.constant(std::move(one_hot)), g.log_softmax(logits)));
    return g.scale(picked, -1.0 / static_cast<double>(labels.size()));
}

Var kd_divergence(Graph& g, const Tensor& teacher_logits, Var student_logits, double tau) {
    check_tau(tau);
    Tensor scaled = teacher_logits;
    for (auto& v : scaled.data()) v /= tau;
    Tensor log_p_t = log_softmax_rows(scaled);
    Tensor p_t = log_p_t;
    for (auto& v : p_t.data()) v = std::exp(v);
    const Var log_q = g.log_softmax(tau == 1.0 ? student_logits : g.scale(student_logits, 1.0 / tau));
    const Var gap = g.sub(g.constant(std::move(log_p_t)), log_q);
    const Var kl = g.sum(g.mul(g.constant(std::move(p_t)), gap));
    return g.scale(kl, tau * tau / static_cast<double>(teacher_logits.rows()));
}

Var l2e(Graph& g, Var z_student, const Tensor& z_teacher, bool squared) {
    const Var unit = g.div_column(z_student, g.row_l2_norm(z_student));
    const Var diff = g.sub(unit, g.constant(normalized_rows(z_teacher, "teacher")));
    const Var per_sample = squared ? g.row_sum(g.mul(diff, diff)) : g.row_l2_norm(diff);
    return g.mean(per_sample);
}

ObjectiveVars build_objective(Graph& g, const BundleVars& student, std::span<const std::size_t> labels,
                              std::size_t num_classes, const TeacherTargets* teacher,
                              const ObjectiveSettings& settings) {
    if (!(settings.alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
    if (!(settings.beta >= 0.0)) throw std::invalid_argument("beta must be >= 0");
    check_alpha_th(settings.alpha_th);

    auto blend = [&](Var own, Var shared) {
        return g.add(g.scale(own, 1.0 - settings.alpha_th), g.scale(shared, settings.alpha_th));
    };

    ObjectiveVars out;
    out.ce = cross_entropy(g, student.logits, labels, num_classes);
    if (student.aux_logits) out.ce = blend(out.ce, cross_entropy(g, *student.aux_logits, labels, num_classes));

    if (teacher) {
        out.kd = kd_divergence(g, teacher->logits, student.logits, settings.tau);
        if (student.aux_logits) out.kd = blend(out.kd, kd_divergence(g, teacher->logits, *student.aux_logits, settings.tau));
        out.rep = l2e(g, student.aligned, teacher->embedding, settings.squared_l2e);
    } else {
        out.kd = g.constant(Tensor::scalar(0.0));
        out.rep = g.constant(Tensor::scalar(0.0));
    }
    out.total = g.add(g.add(out.ce, g.scale(out.kd, settings.alpha)), g.scale(out.rep, settings.beta));
    return out;
}

}  // namespace hskd::losses
