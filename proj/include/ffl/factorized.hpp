#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "ffl/layers.hpp"
#include "ffl/tensor.hpp"

namespace ffl {

/// Rank-1 reparameterization of one layer's kernel: the kernel is stored as
/// a basis vector u, a coefficient vector v and a sparse additive bias mu,
/// and reconstructed as reshape(u * v^T + mu) at forward time.
///
/// Shapes: conv kernel (F, F, I, O) -> u has F*F entries, v has I*O entries;
/// dense kernel (I, O) -> u has I entries, v has O entries. mu is always
/// (len(u), len(v)).
struct FactorizedParam {
    Tensor u;                              // (m)
    Tensor v;                              // (n)
    Tensor mu;                             // (m, n)
    std::vector<std::size_t> reshape_sig;  // (F, F, I, O) or (I, O)

    std::size_t rows() const { return u.numel(); }
    std::size_t cols() const { return v.numel(); }

    void check() const {
        std::size_t target = Tensor::numel_of(reshape_sig);
        if (rows() * cols() != target)
            throw std::invalid_argument(
                "FactorizedParam: u x v size " + std::to_string(rows()) + "x" +
                std::to_string(cols()) + " does not cover kernel " +
                Tensor::shape_str(reshape_sig));
        if (mu.shape != std::vector<std::size_t>{rows(), cols()})
            throw std::invalid_argument("FactorizedParam: mu shape " +
                                        Tensor::shape_str(mu.shape) +
                                        " != (len(u), len(v))");
        if (reshape_sig.size() != 2 && reshape_sig.size() != 4)
            throw std::invalid_argument("FactorizedParam: kernel must be 2-D or 4-D");
    }
};

/// Zero-valued factorized block for the given kernel shape.
inline FactorizedParam make_factorized(const std::vector<std::size_t>& kernel_shape) {
    FactorizedParam p;
    p.reshape_sig = kernel_shape;
    std::size_t m, n;
    if (kernel_shape.size() == 4) {
        m = kernel_shape[0] * kernel_shape[1];
        n = kernel_shape[2] * kernel_shape[3];
    } else if (kernel_shape.size() == 2) {
        m = kernel_shape[0];
        n = kernel_shape[1];
    } else {
        throw std::invalid_argument("make_factorized: kernel must be 2-D or 4-D");
    }
    p.u = Tensor({m});
    p.v = Tensor({n});
    p.mu = Tensor({m, n});
    return p;
}

/// Reshape map from the (m, n) factor matrix to the kernel:
/// W[f1, f2, i, o] = M[f1*F + f2, i*O + o]; identity for dense kernels.
inline Tensor factor_matrix_to_kernel(const Tensor& m,
                                      const std::vector<std::size_t>& sig) {
    if (Tensor::numel_of(sig) != m.numel())
        throw std::invalid_argument("factor_matrix_to_kernel: size mismatch");
    if (sig.size() == 2) return m.reshaped(sig);
    const std::size_t f = sig[0], ic = sig[2], oc = sig[3];
    const std::size_t n = ic * oc;
    Tensor w(sig);
    for (std::size_t f1 = 0; f1 < f; ++f1)
        for (std::size_t f2 = 0; f2 < f; ++f2)
            for (std::size_t i = 0; i < ic; ++i)
                for (std::size_t o = 0; o < oc; ++o)
                    w.data[((f1 * f + f2) * ic + i) * oc + o] =
                        m.data[(f1 * f + f2) * n + i * oc + o];
    return w;
}

/// Inverse of factor_matrix_to_kernel.
inline Tensor kernel_to_factor_matrix(const Tensor& w) {
    const auto& sig = w.shape;
    if (sig.size() == 2) return w;
    if (sig.size() != 4)
        throw std::invalid_argument("kernel_to_factor_matrix: kernel must be 2-D or 4-D");
    const std::size_t f = sig[0], ic = sig[2], oc = sig[3];
    const std::size_t n = ic * oc;
    Tensor m({f * f, n});
    for (std::size_t f1 = 0; f1 < f; ++f1)
        for (std::size_t f2 = 0; f2 < f; ++f2)
            for (std::size_t i = 0; i < ic; ++i)
                for (std::size_t o = 0; o < oc; ++o)
                    m.data[(f1 * f + f2) * n + i * oc + o] =
                        w.data[((f1 * f + f2) * ic + i) * oc + o];
    return m;
}

/// Full kernel W = reshape(u * v^T + mu). Exact arithmetic, no approximation.
inline Tensor reconstruct(const FactorizedParam& p) {
    p.check();
    const std::size_t m = p.rows(), n = p.cols();
    Tensor mat({m, n});
    for (std::size_t a = 0; a < m; ++a) {
        const double ua = p.u.data[a];
        const double* mu_row = &p.mu.data[a * n];
        double* out = &mat.data[a * n];
        for (std::size_t b = 0; b < n; ++b) out[b] = ua * p.v.data[b] + mu_row[b];
    }
    return factor_matrix_to_kernel(mat, p.reshape_sig);
}

struct FactorGrads {
    Tensor du, dv, dmu;
};

/// Chain rule through W = reshape(u * v^T + mu): with M the kernel gradient
/// pulled back to factor-matrix layout, du = M v, dv = M^T u, dmu = M.
inline FactorGrads route_gradients(const FactorizedParam& p, const Tensor& dw) {
    if (dw.shape != p.reshape_sig)
        throw std::invalid_argument("route_gradients: dW shape " +
                                    Tensor::shape_str(dw.shape) + " != kernel " +
                                    Tensor::shape_str(p.reshape_sig));
    Tensor m = kernel_to_factor_matrix(dw);
    const std::size_t rows = p.rows(), cols = p.cols();
    FactorGrads g;
    g.du = Tensor({rows});
    g.dv = Tensor({cols});
    for (std::size_t a = 0; a < rows; ++a) {
        const double* mr = &m.data[a * cols];
        double acc = 0.0;
        for (std::size_t b = 0; b < cols; ++b) {
            acc += mr[b] * p.v.data[b];
            g.dv.data[b] += mr[b] * p.u.data[a];
        }
        g.du.data[a] = acc;
    }
    g.dmu = m.reshaped({rows, cols});
    return g;
}

/// Elementwise soft threshold: sign(x) * max(|x| - lr*lambda, 0).
inline void prox_l1_inplace(Tensor& mu, double lr, double lambda) {
    if (!(lr > 0.0)) throw std::invalid_argument("prox_l1: lr must be > 0");
    if (lambda < 0.0) throw std::invalid_argument("prox_l1: lambda must be >= 0");
    const double t = lr * lambda;
    if (t == 0.0) return;
    for (double& x : mu.data) {
        if (x > t)
            x -= t;
        else if (x < -t)
            x += t;
        else
            x = 0.0;
    }
}

inline Tensor prox_l1(const Tensor& mu, double lr, double lambda) {
    Tensor out = mu;
    prox_l1_inplace(out, lr, lambda);
    return out;
}

/// One per-layer parameter block: either a plain kernel tensor or the
/// factorized triple.
using ParamBlock = std::variant<Tensor, FactorizedParam>;

inline bool is_factorized(const ParamBlock& b) {
    return std::holds_alternative<FactorizedParam>(b);
}

/// Ordered per-layer parameter blocks for one model. classifier_index is the
/// last trainable layer (the classifier head).
struct ModelParams {
    std::vector<ParamBlock> blocks;
    std::size_t classifier_index = 0;

    std::size_t layer_count() const { return blocks.size(); }
    bool factorized() const {
        for (const auto& b : blocks)
            if (is_factorized(b)) return true;
        return false;
    }
};

struct SparsityStats {
    std::size_t nonzero_mu = 0;
    std::size_t total_mu = 0;
    std::size_t effective_params = 0;  // len(u) + len(v) sums + nonzero mu entries
};

/// Counts mu entries with |x| > zero_tol across all factorized blocks; the
/// effective parameter count is what a sparse encoding of the model would
/// store. Plain blocks contribute their full size.
inline SparsityStats sparsity_stats(const ModelParams& params, double zero_tol = 0.0) {
    if (zero_tol < 0.0) throw std::invalid_argument("sparsity_stats: zero_tol must be >= 0");
    SparsityStats s;
    for (const auto& b : params.blocks) {
        if (const auto* fp = std::get_if<FactorizedParam>(&b)) {
            s.effective_params += fp->u.numel() + fp->v.numel();
            s.total_mu += fp->mu.numel();
            for (double x : fp->mu.data)
                if (std::abs(x) > zero_tol) ++s.nonzero_mu;
        } else {
            s.effective_params += std::get<Tensor>(b).numel();
        }
    }
    s.effective_params += s.nonzero_mu;
    return s;
}

/// Total trainable parameters of a net: plain kernels, or the u/v vectors of
/// the factorization (bias matrices excluded; they start empty).
inline std::uint64_t param_count(const std::vector<LayerSpec>& net, bool factorized) {
    std::uint64_t total = 0;
    for (const auto& l : net) {
        if (!l.trainable()) continue;
        if (!factorized) {
            total += l.plain_param_count();
        } else if (l.kind == LayerKind::conv2d) {
            total += static_cast<std::uint64_t>(l.filter_size) * l.filter_size +
                     static_cast<std::uint64_t>(l.in_channels) * l.out_channels;
        } else {
            total += static_cast<std::uint64_t>(l.in_dim) + l.out_dim;
        }
    }
    return total;
}

}  // namespace ffl
