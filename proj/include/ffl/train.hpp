#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "ffl/dataset.hpp"
#include "ffl/loss.hpp"
#include "ffl/model.hpp"
#include "ffl/rng.hpp"

namespace ffl {

/// Copies the examples at the given parent indices into a batch tensor and
/// maps labels through the partition's relabeling and permutation.
inline std::pair<Tensor, std::vector<int>> gather_batch(
    const Dataset& ds, const Partition& part, std::span<const std::size_t> idx) {
    const auto ex_shape = ds.example_shape();
    const std::size_t pix = Tensor::numel_of(ex_shape);
    std::vector<std::size_t> bshape{idx.size()};
    bshape.insert(bshape.end(), ex_shape.begin(), ex_shape.end());
    Tensor batch(std::move(bshape));
    std::vector<int> labels(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        std::copy_n(&ds.examples.data[idx[i] * pix], pix, &batch.data[i * pix]);
        labels[i] = part.effective_label(ds.labels[idx[i]]);
    }
    return {std::move(batch), std::move(labels)};
}

struct LocalTrainConfig {
    std::size_t epochs = 1;
    std::size_t batch_size = 32;
    SgdConfig sgd;
    double lambda_sparsity = 0.0;               // factorized models: prox per step
    double prox_mu = 0.0;                       // proximal pull toward an anchor
    const ModelParams* prox_anchor = nullptr;
    const std::vector<bool>* prox_mask = nullptr;  // per block; null = all blocks
};

struct TrainStats {
    double mean_loss = 0.0;  // over the final epoch
    std::size_t batches = 0;
};

namespace detail {

inline void add_prox_pull(Gradients& grads, const ModelParams& params,
                          const LocalTrainConfig& cfg) {
    for (std::size_t i = 0; i < params.blocks.size(); ++i) {
        if (cfg.prox_mask && !(*cfg.prox_mask)[i]) continue;
        const auto* w = std::get_if<Tensor>(&params.blocks[i]);
        const auto* a = std::get_if<Tensor>(&cfg.prox_anchor->blocks[i]);
        if (!w || !a) continue;  // anchor pull is defined for plain kernels
        auto& g = std::get<Tensor>(grads.blocks[i]);
        for (std::size_t j = 0; j < g.data.size(); ++j)
            g.data[j] += cfg.prox_mu * (w->data[j] - a->data[j]);
    }
}

}  // namespace detail

/// Minibatch SGD over the partition's train split for cfg.epochs passes.
/// Batch order is drawn from stream_seed (one shuffle per epoch), so the call
/// is a pure function of its arguments. Throws on non-finite loss.
inline TrainStats local_train(const std::vector<LayerSpec>& net, ModelParams& params,
                              OptState& opt, const Dataset& ds, const Partition& part,
                              const LocalTrainConfig& cfg, std::uint64_t stream_seed) {
    TrainStats stats;
    const auto& train_idx = part.split.train;
    if (train_idx.empty()) return stats;

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        rng::Stream rs(rng::derive(stream_seed, rng::kBatch, epoch));
        std::vector<std::size_t> order = train_idx;
        rs.shuffle(order);

        double epoch_loss = 0.0;
        std::size_t epoch_batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t len = std::min(cfg.batch_size, order.size() - start);
            auto [batch, labels] =
                gather_batch(ds, part, std::span(order).subspan(start, len));
            auto [logits, cache] = forward(net, params, batch);
            LossResult lr = cross_entropy(logits, labels);
            if (!std::isfinite(lr.loss))
                throw std::runtime_error("non-finite training loss");
            Gradients grads = backward(cache, lr.dlogits);
            if (cfg.prox_mu != 0.0 && cfg.prox_anchor)
                detail::add_prox_pull(grads, params, cfg);
            sgd_step(params, grads, cfg.sgd, opt);
            if (cfg.lambda_sparsity > 0.0)
                for (auto& b : params.blocks)
                    if (auto* fp = std::get_if<FactorizedParam>(&b))
                        prox_l1_inplace(fp->mu, cfg.sgd.lr, cfg.lambda_sparsity);
            epoch_loss += lr.loss;
            ++epoch_batches;
        }
        stats.mean_loss = epoch_loss / static_cast<double>(epoch_batches);
        stats.batches = epoch_batches;
    }
    return stats;
}

struct EvalResult {
    double accuracy = 0.0;
    double loss = 0.0;
    std::size_t count = 0;
};

enum class Split { train, val, test };

inline EvalResult evaluate(const std::vector<LayerSpec>& net, const ModelParams& params,
                           const Dataset& ds, const Partition& part, Split which,
                           std::size_t batch_size = 64) {
    const std::vector<std::size_t>* idx = nullptr;
    switch (which) {
        case Split::train: idx = &part.split.train; break;
        case Split::val: idx = &part.split.val; break;
        case Split::test: idx = &part.split.test; break;
    }
    EvalResult res;
    if (idx->empty()) return res;

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < idx->size(); start += batch_size) {
        const std::size_t len = std::min(batch_size, idx->size() - start);
        auto [batch, labels] = gather_batch(ds, part, std::span(*idx).subspan(start, len));
        auto [logits, cache] = forward(net, params, batch);
        LossResult lr = cross_entropy(logits, labels);
        loss_sum += lr.loss * static_cast<double>(len);
        for (std::size_t r = 0; r < len; ++r)
            if (argmax_row(logits, r) == static_cast<std::size_t>(labels[r])) ++correct;
    }
    res.count = idx->size();
    res.loss = loss_sum / static_cast<double>(res.count);
    res.accuracy = static_cast<double>(correct) / static_cast<double>(res.count);
    return res;
}

}  // namespace ffl
