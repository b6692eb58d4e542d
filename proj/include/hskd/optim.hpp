#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hskd/autodiff.hpp"

namespace hskd {

enum class OptimizerKind { Sgd, Adam };
enum class LrSchedule { Constant, Cosine };

std::string to_string(OptimizerKind kind);
std::string to_string(LrSchedule schedule);
OptimizerKind parse_optimizer(const std::string& text);
LrSchedule parse_lr_schedule(const std::string& text);

// lr at `step` of `total_steps`; cosine decays from base to 0 over the run.
double scheduled_lr(LrSchedule schedule, double base_lr, std::size_t step, std::size_t total_steps);

// Plain SGD or Adam (0.9, 0.999, 1e-8) over a fixed parameter list.
// Frozen parameters are never touched.
class Optimizer {
public:
    Optimizer(OptimizerKind kind, std::vector<Parameter*> params);

    void zero_grad();
    void step(double lr);

private:
    OptimizerKind kind_;
    std::vector<Parameter*> params_;
    std::vector<Tensor> first_moment_;
    std::vector<Tensor> second_moment_;
    std::size_t steps_ = 0;
};

}  // namespace hskd
