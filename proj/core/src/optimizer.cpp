#include "hdlab/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace hdlab {

void Adam::step(std::vector<NamedParam>& params, const std::vector<Tensor>& grads) {
    if (grads.size() != params.size()) {
        throw std::invalid_argument("Adam::step: gradient count does not match parameter count");
    }
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            m_[i] = Tensor(params[i].value.shape());
            v_[i] = Tensor(params[i].value.shape());
        }
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(steps_));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].value;
        const Tensor& g = grads[i];
        if (g.numel() != p.numel()) {
            throw std::invalid_argument("Adam::step: gradient shape mismatch for " +
                                        params[i].name);
        }
        Tensor& m = m_[i];
        Tensor& v = v_[i];
        for (std::size_t e = 0; e < p.numel(); ++e) {
            m[e] = config_.beta1 * m[e] + (1.0 - config_.beta1) * g[e];
            v[e] = config_.beta2 * v[e] + (1.0 - config_.beta2) * g[e] * g[e];
            const double mhat = m[e] / bc1;
            const double vhat = v[e] / bc2;
            p[e] -= config_.lr * mhat / (std::sqrt(vhat) + config_.eps);
        }
    }
}

}  // namespace hdlab
