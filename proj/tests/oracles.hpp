// Test-only reference implementations, kept independent of the library's
// production code paths: a straight-loop network forward pass and a central
// finite-difference gradient checker.

#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ffl/model.hpp"
#include "ffl/loss.hpp"

namespace oracle {

// Naive forward pass over plain-kernel nets: direct translation of the layer
// definitions with no shared code or buffer reuse.
inline std::vector<double> naive_forward(const std::vector<ffl::LayerSpec>& net,
                                         const std::vector<ffl::Tensor>& kernels,
                                         const ffl::Tensor& batch,
                                         std::vector<std::size_t>& out_shape) {
    std::vector<double> x(batch.data);
    std::vector<std::size_t> shape = batch.shape;
    std::size_t ki = 0;
    for (const auto& l : net) {
        switch (l.kind) {
            case ffl::LayerKind::dense: {
                const auto& w = kernels[ki++];
                const std::size_t b = shape[0], in = l.in_dim, out = l.out_dim;
                std::vector<double> y(b * out, 0.0);
                for (std::size_t r = 0; r < b; ++r)
                    for (std::size_t o = 0; o < out; ++o) {
                        double acc = 0.0;
                        for (std::size_t i = 0; i < in; ++i)
                            acc += x[r * in + i] * w.data[i * out + o];
                        y[r * out + o] = acc;
                    }
                x = y;
                shape = {b, out};
                break;
            }
            case ffl::LayerKind::conv2d: {
                const auto& w = kernels[ki++];
                const std::size_t b = shape[0], ic = shape[1], h = shape[2], wd = shape[3];
                const std::size_t f = l.filter_size, s = l.stride, oc = l.out_channels;
                const std::size_t ho = (h - f) / s + 1, wo = (wd - f) / s + 1;
                std::vector<double> y(b * oc * ho * wo, 0.0);
                for (std::size_t n = 0; n < b; ++n)
                    for (std::size_t o = 0; o < oc; ++o)
                        for (std::size_t p = 0; p < ho; ++p)
                            for (std::size_t q = 0; q < wo; ++q) {
                                double acc = 0.0;
                                for (std::size_t f1 = 0; f1 < f; ++f1)
                                    for (std::size_t f2 = 0; f2 < f; ++f2)
                                        for (std::size_t i = 0; i < ic; ++i)
                                            acc += x[((n * ic + i) * h + (p * s + f1)) * wd +
                                                     (q * s + f2)] *
                                                   w.data[((f1 * f + f2) * ic + i) * oc + o];
                                y[((n * oc + o) * ho + p) * wo + q] = acc;
                            }
                x = y;
                shape = {b, oc, ho, wo};
                break;
            }
            case ffl::LayerKind::relu:
                for (double& v : x)
                    if (v < 0.0) v = 0.0;
                break;
            case ffl::LayerKind::maxpool2d: {
                const std::size_t b = shape[0], c = shape[1], h = shape[2], wd = shape[3];
                const std::size_t f = l.filter_size, s = l.stride;
                const std::size_t ho = (h - f) / s + 1, wo = (wd - f) / s + 1;
                std::vector<double> y(b * c * ho * wo);
                for (std::size_t n = 0; n < b; ++n)
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t p = 0; p < ho; ++p)
                            for (std::size_t q = 0; q < wo; ++q) {
                                double best = -1e300;
                                for (std::size_t f1 = 0; f1 < f; ++f1)
                                    for (std::size_t f2 = 0; f2 < f; ++f2)
                                        best = std::max(
                                            best, x[((n * c + ch) * h + (p * s + f1)) * wd +
                                                    (q * s + f2)]);
                                y[((n * c + ch) * ho + p) * wo + q] = best;
                            }
                x = y;
                shape = {b, c, ho, wo};
                break;
            }
            case ffl::LayerKind::flatten: {
                std::size_t rest = 1;
                for (std::size_t i = 1; i < shape.size(); ++i) rest *= shape[i];
                shape = {shape[0], rest};
                break;
            }
        }
    }
    out_shape = shape;
    return x;
}

/// Central finite difference of f at the given slot.
inline double central_diff(const std::function<double()>& f, double& slot, double h) {
    const double orig = slot;
    slot = orig + h;
    const double fp = f();
    slot = orig - h;
    const double fm = f();
    slot = orig;
    return (fp - fm) / (2.0 * h);
}

inline double rel_err(double analytic, double numeric) {
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / denom;
}

/// Max relative error between analytic parameter gradients and central
/// finite differences, over every parameter slot of the model.
inline double max_grad_rel_err(const std::vector<ffl::LayerSpec>& net,
                               ffl::ModelParams& params, const ffl::Tensor& batch,
                               const std::vector<int>& labels, double h) {
    auto loss_fn = [&]() {
        auto [logits, cache] = ffl::forward(net, params, batch);
        return ffl::cross_entropy(logits, labels).loss;
    };
    auto [logits, cache] = ffl::forward(net, params, batch);
    ffl::LossResult lr = ffl::cross_entropy(logits, labels);
    ffl::Gradients grads = ffl::backward(cache, lr.dlogits);

    double worst = 0.0;
    for (std::size_t b = 0; b < params.blocks.size(); ++b) {
        if (auto* fp = std::get_if<ffl::FactorizedParam>(&params.blocks[b])) {
            const auto& g = std::get<ffl::FactorGrads>(grads.blocks[b]);
            for (std::size_t i = 0; i < fp->u.data.size(); ++i)
                worst = std::max(worst, rel_err(g.du.data[i],
                                                central_diff(loss_fn, fp->u.data[i], h)));
            for (std::size_t i = 0; i < fp->v.data.size(); ++i)
                worst = std::max(worst, rel_err(g.dv.data[i],
                                                central_diff(loss_fn, fp->v.data[i], h)));
            for (std::size_t i = 0; i < fp->mu.data.size(); ++i)
                worst = std::max(worst, rel_err(g.dmu.data[i],
                                                central_diff(loss_fn, fp->mu.data[i], h)));
        } else {
            auto& w = std::get<ffl::Tensor>(params.blocks[b]);
            const auto& g = std::get<ffl::Tensor>(grads.blocks[b]);
            for (std::size_t i = 0; i < w.data.size(); ++i)
                worst = std::max(worst,
                                 rel_err(g.data[i], central_diff(loss_fn, w.data[i], h)));
        }
    }
    return worst;
}

/// Max relative error of the input gradient against finite differences.
inline double max_input_grad_rel_err(const std::vector<ffl::LayerSpec>& net,
                                     const ffl::ModelParams& params, ffl::Tensor& batch,
                                     const std::vector<int>& labels, double h) {
    auto loss_fn = [&]() {
        auto [logits, cache] = ffl::forward(net, params, batch);
        return ffl::cross_entropy(logits, labels).loss;
    };
    auto [logits, cache] = ffl::forward(net, params, batch);
    ffl::LossResult lr = ffl::cross_entropy(logits, labels);
    ffl::Gradients grads = ffl::backward(cache, lr.dlogits);
    double worst = 0.0;
    for (std::size_t i = 0; i < batch.data.size(); ++i)
        worst = std::max(worst, rel_err(grads.dinput.data[i],
                                        central_diff(loss_fn, batch.data[i], h)));
    return worst;
}

}  // namespace oracle
