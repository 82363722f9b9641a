#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffl/tensor.hpp"

namespace ffl {

inline double cosine(std::span<const double> a, std::span<const double> b) {
    bool identical = a.size() == b.size();
    for (std::size_t i = 0; identical && i < a.size(); ++i) identical = a[i] == b[i];
    if (identical) return 1.0;  // exact for equal vectors, e.g. shared init
    const double na = l2_norm(a), nb = l2_norm(b);
    return dot(a, b) / (na * nb);
}

/// Per-client cosine scores against client k's vector, thresholded at tau
/// (scores below tau are set to zero); the self-score is fixed at 1.0.
inline std::vector<double> similarity_match(const std::vector<std::vector<double>>& vecs,
                                            std::size_t k, double tau) {
    const std::size_t n = vecs.size();
    if (k >= n) throw std::invalid_argument("similarity_match: client index out of range");
    for (std::size_t i = 0; i < n; ++i) {
        if (vecs[i].size() != vecs[k].size())
            throw std::invalid_argument("similarity_match: vector length mismatch at client " +
                                        std::to_string(i));
        if (l2_norm(vecs[i]) == 0.0)
            throw std::runtime_error("similarity_match: zero-norm vector for client " +
                                     std::to_string(i));
    }
    std::vector<double> sigma(n, 0.0);
    sigma[k] = 1.0;
    for (std::size_t i = 0; i < n; ++i) {
        if (i == k) continue;
        const double c = cosine(vecs[k], vecs[i]);
        sigma[i] = c >= tau ? c : 0.0;
    }
    return sigma;
}

/// softmax(epsilon * sigma), max-shifted; weights are positive and sum to 1.
inline std::vector<double> softmax_weights(const std::vector<double>& sigma,
                                           double epsilon) {
    if (sigma.empty()) throw std::invalid_argument("softmax_weights: empty scores");
    std::vector<double> w(sigma.size());
    double m = epsilon * sigma[0];
    for (double s : sigma) m = std::max(m, epsilon * s);
    double sum = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        w[i] = std::exp(epsilon * sigma[i] - m);
        sum += w[i];
    }
    for (double& x : w) x /= sum;
    return w;
}

/// Full pairwise cosine matrix with unit diagonal; entries below tau are
/// zeroed. Cosines are computed once per pair, so the matrix is exactly
/// symmetric.
inline std::vector<std::vector<double>> similarity_matrix(
    const std::vector<std::vector<double>>& vecs, double tau) {
    const std::size_t n = vecs.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
        if (l2_norm(vecs[i]) == 0.0)
            throw std::runtime_error("similarity_matrix: zero-norm vector for client " +
                                     std::to_string(i));
        m[i][i] = 1.0;
    }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = cosine(vecs[i], vecs[j]);
            const double t = c >= tau ? c : 0.0;
            m[i][j] = t;
            m[j][i] = t;
        }
    return m;
}

/// Convex combination of per-client vector sets under the given weights.
/// sets[i][l] is client i's vector for layer l.
inline std::vector<std::vector<double>> weighted_average_sets(
    const std::vector<const std::vector<std::vector<double>>*>& sets,
    const std::vector<double>& weights) {
    if (sets.empty() || sets.size() != weights.size())
        throw std::invalid_argument("weighted_average_sets: size mismatch");
    std::vector<std::vector<double>> out = *sets[0];
    for (auto& layer : out)
        for (double& x : layer) x = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i)
        for (std::size_t l = 0; l < out.size(); ++l) {
            const auto& src = (*sets[i])[l];
            for (std::size_t j = 0; j < src.size(); ++j)
                out[l][j] += weights[i] * src[j];
        }
    return out;
}

}  // namespace ffl
