#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffl/tensor.hpp"

namespace ffl {

/// Row-wise softmax with max-shift for stability.
inline Tensor softmax_rows(const Tensor& logits) {
    const std::size_t b = logits.shape[0], c = logits.shape[1];
    Tensor p(logits.shape);
    for (std::size_t r = 0; r < b; ++r) {
        const double* z = &logits.data[r * c];
        double* pr = &p.data[r * c];
        double m = z[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            pr[j] = std::exp(z[j] - m);
            sum += pr[j];
        }
        for (std::size_t j = 0; j < c; ++j) pr[j] /= sum;
    }
    return p;
}

struct LossResult {
    double loss = 0.0;
    Tensor dlogits;
};

/// Mean negative log-likelihood of the labelled class under row softmax,
/// with its gradient (softmax - onehot) / batch.
inline LossResult cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    const std::size_t b = logits.shape[0], c = logits.shape[1];
    if (labels.size() != b)
        throw std::invalid_argument("cross_entropy: labels length " +
                                    std::to_string(labels.size()) + " != batch " +
                                    std::to_string(b));
    for (std::size_t r = 0; r < b; ++r)
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= c)
            throw std::invalid_argument("cross_entropy: label " +
                                        std::to_string(labels[r]) + " out of range [0, " +
                                        std::to_string(c) + ") at row " +
                                        std::to_string(r));

    LossResult res;
    res.dlogits = softmax_rows(logits);
    double total = 0.0;
    for (std::size_t r = 0; r < b; ++r) {
        const double* z = &logits.data[r * c];
        double m = z[0];
        for (std::size_t j = 1; j < c; ++j) m = std::max(m, z[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - m);
        const auto y = static_cast<std::size_t>(labels[r]);
        total += -(z[y] - m - std::log(sum));
        res.dlogits.data[r * c + y] -= 1.0;
    }
    res.loss = total / static_cast<double>(b);
    for (double& g : res.dlogits.data) g /= static_cast<double>(b);
    return res;
}

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
    const std::size_t c = logits.shape[1];
    const double* z = &logits.data[row * c];
    std::size_t best = 0;
    for (std::size_t j = 1; j < c; ++j)
        if (z[j] > z[best]) best = j;
    return best;
}

}  // namespace ffl
