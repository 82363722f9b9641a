#pragma once

#include <span>
#include <stdexcept>

namespace ffl {

struct SgdConfig {
    double lr = 1e-3;
    double momentum = 0.9;
    double weight_decay = 1e-6;

    void check() const {
        if (!(lr > 0.0)) throw std::invalid_argument("sgd: lr must be > 0");
        if (momentum < 0.0 || momentum >= 1.0)
            throw std::invalid_argument("sgd: momentum must be in [0, 1)");
        if (weight_decay < 0.0)
            throw std::invalid_argument("sgd: weight_decay must be >= 0");
    }
};

/// Momentum SGD, weight decay folded into the gradient before the buffer:
///   v <- momentum * v + (g + wd * p);  p <- p - lr * v.
inline void sgd_step(std::span<double> param, std::span<const double> grad,
                     std::span<double> velocity, const SgdConfig& cfg) {
    cfg.check();
    if (param.size() != grad.size() || param.size() != velocity.size())
        throw std::invalid_argument("sgd_step: size mismatch");
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = cfg.momentum * velocity[i] +
                      (grad[i] + cfg.weight_decay * param[i]);
        param[i] -= cfg.lr * velocity[i];
    }
}

}  // namespace ffl
