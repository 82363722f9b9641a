#pragma once

#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "ffl/factorized.hpp"
#include "ffl/layers.hpp"
#include "ffl/optim.hpp"
#include "ffl/rng.hpp"
#include "ffl/tensor.hpp"

namespace ffl {

/// Fan-in-scaled uniform init for plain kernels; for factorized blocks u is
/// drawn the way a (len(u), len(v)) kernel's rows would be, v is all-ones
/// scaled by 1/sqrt(len(v)), and mu starts at zero.
inline ModelParams init_params(const std::vector<LayerSpec>& net, bool factorized,
                               rng::Stream& rs) {
    ModelParams params;
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        const auto ks = l.kernel_shape();
        if (!factorized) {
            const std::size_t fan_in =
                l.kind == LayerKind::conv2d
                    ? l.filter_size * l.filter_size * l.in_channels
                    : l.in_dim;
            const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
            Tensor w(ks);
            for (double& x : w.data) x = rs.uniform(-bound, bound);
            params.blocks.emplace_back(std::move(w));
        } else {
            FactorizedParam fp = make_factorized(ks);
            const double ub = 1.0 / std::sqrt(static_cast<double>(fp.rows()));
            for (double& x : fp.u.data) x = rs.uniform(-ub, ub);
            const double vs = 1.0 / std::sqrt(static_cast<double>(fp.cols()));
            fp.v.fill(vs);
            params.blocks.emplace_back(std::move(fp));
        }
    }
    if (params.blocks.empty())
        throw std::invalid_argument("init_params: net has no trainable layers");
    params.classifier_index = params.blocks.size() - 1;
    return params;
}

/// Checks that params are structurally congruent with the net; throws naming
/// the offending layer.
inline void check_congruent(const std::vector<LayerSpec>& net, const ModelParams& params) {
    std::size_t bi = 0;
    for (std::size_t li = 0; li < net.size(); ++li) {
        if (!net[li].trainable()) continue;
        if (bi >= params.blocks.size())
            throw std::invalid_argument("layer " + std::to_string(li) +
                                        ": missing parameter block");
        const auto ks = net[li].kernel_shape();
        const auto& b = params.blocks[bi];
        if (const auto* fp = std::get_if<FactorizedParam>(&b)) {
            if (fp->reshape_sig != ks)
                throw std::invalid_argument("layer " + std::to_string(li) +
                                            ": factorized block kernel " +
                                            Tensor::shape_str(fp->reshape_sig) +
                                            " != expected " + Tensor::shape_str(ks));
        } else if (std::get<Tensor>(b).shape != ks) {
            throw std::invalid_argument("layer " + std::to_string(li) + ": kernel " +
                                        Tensor::shape_str(std::get<Tensor>(b).shape) +
                                        " != expected " + Tensor::shape_str(ks));
        }
        ++bi;
    }
    if (bi != params.blocks.size())
        throw std::invalid_argument("params carry " + std::to_string(params.blocks.size()) +
                                    " blocks but net has " + std::to_string(bi) +
                                    " trainable layers");
}

/// Activation record from forward, self-contained for backward. Factor
/// snapshots keep the u/v values the reconstruction used, so gradient routing
/// stays correct even if the caller mutates params in between.
struct ForwardCache {
    std::vector<LayerSpec> net;
    std::vector<Tensor> inputs;                        // input to each layer
    std::vector<std::vector<std::size_t>> pool_argmax; // per layer, pools only
    std::vector<Tensor> weights;                       // per trainable layer
    std::vector<std::optional<std::pair<Tensor, Tensor>>> factor_uv;  // per block
    std::vector<std::vector<std::size_t>> kernel_sigs; // per block
    std::vector<std::size_t> logits_shape;
};

/// Runs the layer stack. Batch layout: (B, C, H, W) when the first layer is
/// spatial, (B, D) for a dense-only net.
inline std::pair<Tensor, ForwardCache> forward(const std::vector<LayerSpec>& net,
                                               const ModelParams& params,
                                               const Tensor& batch) {
    if (batch.shape.size() < 2)
        throw std::invalid_argument("forward: batch must have a leading batch axis");
    check_congruent(net, params);
    infer_shapes(net, {batch.shape.begin() + 1, batch.shape.end()});

    ForwardCache cache;
    cache.net = net;
    cache.inputs.reserve(net.size());
    cache.pool_argmax.resize(net.size());

    Tensor x = batch;
    std::size_t bi = 0;
    for (std::size_t li = 0; li < net.size(); ++li) {
        const auto& l = net[li];
        cache.inputs.push_back(x);
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::conv2d: {
                const auto& blk = params.blocks[bi];
                Tensor w;
                if (const auto* fp = std::get_if<FactorizedParam>(&blk)) {
                    w = reconstruct(*fp);
                    cache.factor_uv.emplace_back(std::make_pair(fp->u, fp->v));
                } else {
                    w = std::get<Tensor>(blk);
                    cache.factor_uv.emplace_back(std::nullopt);
                }
                cache.kernel_sigs.push_back(w.shape);
                x = l.kind == LayerKind::dense ? dense_forward(x, w)
                                               : conv2d_forward(x, w, l.stride);
                cache.weights.push_back(std::move(w));
                ++bi;
                break;
            }
            case LayerKind::relu:
                x = relu_forward(x);
                break;
            case LayerKind::maxpool2d:
                x = maxpool2d_forward(x, l.filter_size, l.stride, cache.pool_argmax[li]);
                break;
            case LayerKind::flatten:
                x = flatten_forward(x);
                break;
        }
    }
    cache.logits_shape = x.shape;
    return {std::move(x), std::move(cache)};
}

/// Per-block gradient: a kernel tensor for plain blocks, routed factor
/// gradients for factorized ones.
using GradBlock = std::variant<Tensor, FactorGrads>;

struct Gradients {
    std::vector<GradBlock> blocks;
    Tensor dinput;
};

inline Gradients backward(const ForwardCache& cache, const Tensor& dlogits) {
    if (dlogits.shape != cache.logits_shape)
        throw std::runtime_error("backward: dlogits shape " +
                                 Tensor::shape_str(dlogits.shape) +
                                 " does not match cached logits " +
                                 Tensor::shape_str(cache.logits_shape) +
                                 " (stale or mismatched cache)");
    const auto& net = cache.net;
    Gradients grads;
    grads.blocks.resize(cache.weights.size());

    Tensor dy = dlogits;
    std::size_t bi = cache.weights.size();
    for (std::size_t li = net.size(); li-- > 0;) {
        const auto& l = net[li];
        const Tensor& x = cache.inputs[li];
        switch (l.kind) {
            case LayerKind::dense:
            case LayerKind::conv2d: {
                --bi;
                Tensor dw, dx;
                if (l.kind == LayerKind::dense)
                    dense_backward(x, cache.weights[bi], dy, dw, dx);
                else
                    conv2d_backward(x, cache.weights[bi], dy, l.stride, dw, dx);
                if (cache.factor_uv[bi]) {
                    FactorizedParam snap;
                    snap.u = cache.factor_uv[bi]->first;
                    snap.v = cache.factor_uv[bi]->second;
                    snap.reshape_sig = cache.kernel_sigs[bi];
                    snap.mu = Tensor({snap.rows(), snap.cols()});
                    grads.blocks[bi] = route_gradients(snap, dw);
                } else {
                    grads.blocks[bi] = std::move(dw);
                }
                dy = std::move(dx);
                break;
            }
            case LayerKind::relu:
                dy = relu_backward(x, dy);
                break;
            case LayerKind::maxpool2d:
                dy = maxpool2d_backward(cache.pool_argmax[li], x.shape, dy);
                break;
            case LayerKind::flatten:
                dy = dy.reshaped(x.shape);
                break;
        }
    }
    grads.dinput = std::move(dy);
    return grads;
}

/// Momentum buffers, mirroring the parameter structure.
struct OptState {
    std::vector<GradBlock> velocity;
};

inline OptState make_opt_state(const ModelParams& params) {
    OptState st;
    for (const auto& b : params.blocks) {
        if (const auto* fp = std::get_if<FactorizedParam>(&b)) {
            FactorGrads v;
            v.du = Tensor(fp->u.shape);
            v.dv = Tensor(fp->v.shape);
            v.dmu = Tensor(fp->mu.shape);
            st.velocity.emplace_back(std::move(v));
        } else {
            st.velocity.emplace_back(Tensor(std::get<Tensor>(b).shape));
        }
    }
    return st;
}

/// One SGD step over every block; factorized blocks step u, v and mu
/// independently (weight decay applies to each factor, not to the
/// reconstructed kernel).
inline void sgd_step(ModelParams& params, const Gradients& grads, const SgdConfig& cfg,
                     OptState& opt) {
    cfg.check();
    if (grads.blocks.size() != params.blocks.size())
        throw std::invalid_argument("sgd_step: gradient/parameter block count mismatch");
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        if (auto* fp = std::get_if<FactorizedParam>(&params.blocks[i])) {
            const auto& g = std::get<FactorGrads>(grads.blocks[i]);
            auto& v = std::get<FactorGrads>(opt.velocity[i]);
            sgd_step(fp->u.data, g.du.data, v.du.data, cfg);
            sgd_step(fp->v.data, g.dv.data, v.dv.data, cfg);
            sgd_step(fp->mu.data, g.dmu.data, v.dmu.data, cfg);
        } else {
            auto& w = std::get<Tensor>(params.blocks[i]);
            sgd_step(w.data, std::get<Tensor>(grads.blocks[i]).data,
                     std::get<Tensor>(opt.velocity[i]).data, cfg);
        }
    }
}

/// All parameter values concatenated in block order (u, v, mu for factorized
/// blocks); used for drift measurements and serialization.
inline std::vector<double> flatten_params(const ModelParams& params) {
    std::vector<double> out;
    for (const auto& b : params.blocks) {
        if (const auto* fp = std::get_if<FactorizedParam>(&b)) {
            out.insert(out.end(), fp->u.data.begin(), fp->u.data.end());
            out.insert(out.end(), fp->v.data.begin(), fp->v.data.end());
            out.insert(out.end(), fp->mu.data.begin(), fp->mu.data.end());
        } else {
            const auto& w = std::get<Tensor>(b);
            out.insert(out.end(), w.data.begin(), w.data.end());
        }
    }
    return out;
}

/// Concatenation of all u vectors / all v vectors across factorized blocks.
inline std::vector<double> flatten_factors(const ModelParams& params, bool basis) {
    std::vector<double> out;
    for (const auto& b : params.blocks) {
        const auto* fp = std::get_if<FactorizedParam>(&b);
        if (!fp) continue;
        const auto& t = basis ? fp->u : fp->v;
        out.insert(out.end(), t.data.begin(), t.data.end());
    }
    return out;
}

}  // namespace ffl
