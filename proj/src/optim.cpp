#include "hskd/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hskd {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::Sgd ? "sgd" : "adam"; }
std::string to_string(LrSchedule schedule) { return schedule == LrSchedule::Constant ? "constant" : "cosine"; }

OptimizerKind parse_optimizer(const std::string& text) {
    if (text == "sgd") return OptimizerKind::Sgd;
    if (text == "adam") return OptimizerKind::Adam;
    throw std::invalid_argument("optimizer: expected sgd or adam, got '" + text + "'");
}

LrSchedule parse_lr_schedule(const std::string& text) {
    if (text == "constant") return LrSchedule::Constant;
    if (text == "cosine") return LrSchedule::Cosine;
    throw std::invalid_argument("lr_schedule: expected constant or cosine, got '" + text + "'");
}

double scheduled_lr(LrSchedule schedule, double base_lr, std::size_t step, std::size_t total_steps) {
    if (schedule == LrSchedule::Constant || total_steps == 0) return base_lr;
    const double progress = static_cast<double>(step) / static_cast<double>(total_steps);
    return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

Optimizer::Optimizer(OptimizerKind kind, std::vector<Parameter*> params) : kind_(kind), params_(std::move(params)) {
    for (Parameter* p : params_) {
        first_moment_.emplace_back(p->value.shape(), 0.0);
        second_moment_.emplace_back(p->value.shape(), 0.0);
    }
}

void Optimizer::zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
}

void Optimizer::step(double lr) {
    constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    ++steps_;
    const double correction1 = 1.0 - std::pow(beta1, static_cast<double>(steps_));
    const double correction2 = 1.0 - std::pow(beta2, static_cast<double>(steps_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        Parameter& p = *params_[k];
        if (!p.trainable) continue;
        if (p.grad.size() != p.value.size()) continue;  // never reached by backward
        auto w = p.value.data();
        auto g = p.grad.data();
        if (kind_ == OptimizerKind::Sgd) {
            for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
            continue;
        }
        auto m = first_moment_[k].data();
        auto v = second_moment_[k].data();
        for (std::size_t i = 0; i < w.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            w[i] -= lr * (m[i] / correction1) / (std::sqrt(v[i] / correction2) + eps);
        }
    }
}

}  // namespace hskd
