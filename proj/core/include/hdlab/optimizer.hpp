#pragma once

#include <vector>

#include "hdlab/nets.hpp"
#include "hdlab/tensor.hpp"

namespace hdlab {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
};

// Plain first/second-moment scheme with bias correction. Moment slots are
// allocated lazily on the first step and stay aligned with the parameter list.
class Adam {
public:
    explicit Adam(AdamConfig config) : config_(config) {}

    const AdamConfig& config() const { return config_; }
    void set_lr(double lr) { config_.lr = lr; }

    void step(std::vector<NamedParam>& params, const std::vector<Tensor>& grads);

private:
    AdamConfig config_;
    std::vector<Tensor> m_, v_;
    long steps_ = 0;
};

}  // namespace hdlab
