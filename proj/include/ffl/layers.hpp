#pragma once

#include <algorithm>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "ffl/tensor.hpp"

namespace ffl {

enum class LayerKind { dense, conv2d, relu, maxpool2d, flatten };

inline const char* layer_kind_name(LayerKind k) {
    switch (k) {
        case LayerKind::dense: return "dense";
        case LayerKind::conv2d: return "conv2d";
        case LayerKind::relu: return "relu";
        case LayerKind::maxpool2d: return "maxpool2d";
        case LayerKind::flatten: return "flatten";
    }
    return "?";
}

/// One layer of the network stack.
///
/// Conventions, fixed across the library:
///  - activations are (B, C, H, W) for spatial layers and (B, D) for dense,
///    flat row-major;
///  - conv kernels are (F, F, I, O): W[f1, f2, i, o];
///  - dense kernels are (I, O): y = x * W;
///  - convolution and pooling use valid padding, output dim
///    floor((in - F) / stride) + 1;
///  - layers carry no bias vectors.
struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::size_t in_dim = 0, out_dim = 0;            // dense
    std::size_t in_channels = 0, out_channels = 0;  // conv2d
    std::size_t filter_size = 0;                    // conv2d, maxpool2d
    std::size_t stride = 1;                         // conv2d, maxpool2d

    static LayerSpec dense(std::size_t in, std::size_t out) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.in_dim = in;
        l.out_dim = out;
        return l;
    }
    static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch,
                            std::size_t filter, std::size_t stride = 1) {
        LayerSpec l;
        l.kind = LayerKind::conv2d;
        l.in_channels = in_ch;
        l.out_channels = out_ch;
        l.filter_size = filter;
        l.stride = stride;
        return l;
    }
    static LayerSpec relu() {
        LayerSpec l;
        l.kind = LayerKind::relu;
        return l;
    }
    static LayerSpec maxpool2d(std::size_t filter, std::size_t stride) {
        LayerSpec l;
        l.kind = LayerKind::maxpool2d;
        l.filter_size = filter;
        l.stride = stride;
        return l;
    }
    static LayerSpec flatten() {
        LayerSpec l;
        l.kind = LayerKind::flatten;
        return l;
    }

    bool trainable() const {
        return kind == LayerKind::dense || kind == LayerKind::conv2d;
    }

    /// Kernel shape: (F, F, I, O) for conv, (I, O) for dense.
    std::vector<std::size_t> kernel_shape() const {
        if (kind == LayerKind::conv2d)
            return {filter_size, filter_size, in_channels, out_channels};
        if (kind == LayerKind::dense) return {in_dim, out_dim};
        throw std::logic_error("kernel_shape: layer has no parameters");
    }

    std::size_t plain_param_count() const {
        std::size_t n = 1;
        for (std::size_t e : kernel_shape()) n *= e;
        return n;
    }
};

/// Per-example output shape of one layer; throws on inconsistent input.
inline std::vector<std::size_t> layer_output_shape(
    const LayerSpec& l, const std::vector<std::size_t>& in) {
    auto fail = [&](const std::string& msg) {
        throw std::invalid_argument(std::string(layer_kind_name(l.kind)) + ": " + msg +
                                    " (input " + Tensor::shape_str(in) + ")");
    };
    switch (l.kind) {
        case LayerKind::dense:
            if (in.size() != 1 || in[0] != l.in_dim)
                fail("expects a vector of length " + std::to_string(l.in_dim));
            return {l.out_dim};
        case LayerKind::conv2d: {
            if (in.size() != 3 || in[0] != l.in_channels)
                fail("expects (C=" + std::to_string(l.in_channels) + ", H, W) input");
            if (in[1] < l.filter_size || in[2] < l.filter_size)
                fail("spatial extent smaller than filter");
            std::size_t ho = (in[1] - l.filter_size) / l.stride + 1;
            std::size_t wo = (in[2] - l.filter_size) / l.stride + 1;
            return {l.out_channels, ho, wo};
        }
        case LayerKind::maxpool2d: {
            if (in.size() != 3) fail("expects (C, H, W) input");
            if (in[1] < l.filter_size || in[2] < l.filter_size)
                fail("spatial extent smaller than window");
            std::size_t ho = (in[1] - l.filter_size) / l.stride + 1;
            std::size_t wo = (in[2] - l.filter_size) / l.stride + 1;
            return {in[0], ho, wo};
        }
        case LayerKind::relu:
            return in;
        case LayerKind::flatten: {
            std::size_t n = 1;
            for (std::size_t e : in) n *= e;
            return {n};
        }
    }
    fail("unknown layer kind");
    return {};
}

/// Shapes of every layer boundary: result[0] is the input shape, result[i+1]
/// the output of layer i. Throws naming the offending layer.
inline std::vector<std::vector<std::size_t>> infer_shapes(
    const std::vector<LayerSpec>& net, const std::vector<std::size_t>& input_shape) {
    std::vector<std::vector<std::size_t>> shapes{input_shape};
    for (std::size_t i = 0; i < net.size(); ++i) {
        try {
            shapes.push_back(layer_output_shape(net[i], shapes.back()));
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument("layer " + std::to_string(i) + ": " + e.what());
        }
    }
    return shapes;
}

inline std::size_t trainable_count(const std::vector<LayerSpec>& net) {
    std::size_t n = 0;
    for (const auto& l : net) n += l.trainable() ? 1 : 0;
    return n;
}

// ---- dense ----

inline Tensor dense_forward(const Tensor& x, const Tensor& w) {
    const std::size_t b = x.shape[0], in = w.shape[0], out = w.shape[1];
    Tensor y({b, out});
    for (std::size_t r = 0; r < b; ++r) {
        const double* xr = &x.data[r * in];
        double* yr = &y.data[r * out];
        for (std::size_t i = 0; i < in; ++i) {
            const double xi = xr[i];
            const double* wi = &w.data[i * out];
            for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wi[o];
        }
    }
    return y;
}

inline void dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                           Tensor& dw, Tensor& dx) {
    const std::size_t b = x.shape[0], in = w.shape[0], out = w.shape[1];
    dw = Tensor({in, out});
    dx = Tensor(x.shape);
    for (std::size_t r = 0; r < b; ++r) {
        const double* xr = &x.data[r * in];
        const double* dyr = &dy.data[r * out];
        double* dxr = &dx.data[r * in];
        for (std::size_t i = 0; i < in; ++i) {
            const double* wi = &w.data[i * out];
            double* dwi = &dw.data[i * out];
            double acc = 0.0;
            for (std::size_t o = 0; o < out; ++o) {
                dwi[o] += xr[i] * dyr[o];
                acc += wi[o] * dyr[o];
            }
            dxr[i] = acc;
        }
    }
}

// ---- conv2d ----

inline Tensor conv2d_forward(const Tensor& x, const Tensor& w, std::size_t stride) {
    const std::size_t b = x.shape[0], ic = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t f = w.shape[0], oc = w.shape[3];
    const std::size_t ho = (h - f) / stride + 1, wo = (wd - f) / stride + 1;
    Tensor y({b, oc, ho, wo});
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t p = 0; p < ho; ++p)
                for (std::size_t q = 0; q < wo; ++q) {
                    double acc = 0.0;
                    for (std::size_t f1 = 0; f1 < f; ++f1)
                        for (std::size_t f2 = 0; f2 < f; ++f2)
                            for (std::size_t i = 0; i < ic; ++i) {
                                const double xv =
                                    x.data[((n * ic + i) * h + p * stride + f1) * wd +
                                           q * stride + f2];
                                const double wv =
                                    w.data[((f1 * f + f2) * ic + i) * oc + o];
                                acc += xv * wv;
                            }
                    y.data[((n * oc + o) * ho + p) * wo + q] = acc;
                }
    return y;
}

inline void conv2d_backward(const Tensor& x, const Tensor& w, const Tensor& dy,
                            std::size_t stride, Tensor& dw, Tensor& dx) {
    const std::size_t b = x.shape[0], ic = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t f = w.shape[0], oc = w.shape[3];
    const std::size_t ho = dy.shape[2], wo = dy.shape[3];
    dw = Tensor(w.shape);
    dx = Tensor(x.shape);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t o = 0; o < oc; ++o)
            for (std::size_t p = 0; p < ho; ++p)
                for (std::size_t q = 0; q < wo; ++q) {
                    const double g = dy.data[((n * oc + o) * ho + p) * wo + q];
                    if (g == 0.0) continue;
                    for (std::size_t f1 = 0; f1 < f; ++f1)
                        for (std::size_t f2 = 0; f2 < f; ++f2)
                            for (std::size_t i = 0; i < ic; ++i) {
                                const std::size_t xi =
                                    ((n * ic + i) * h + p * stride + f1) * wd +
                                    q * stride + f2;
                                const std::size_t wi =
                                    ((f1 * f + f2) * ic + i) * oc + o;
                                dw.data[wi] += x.data[xi] * g;
                                dx.data[xi] += w.data[wi] * g;
                            }
                }
}

// ---- relu ----

inline Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (double& v : y.data) v = std::max(0.0, v);
    return y;
}

inline Tensor relu_backward(const Tensor& x, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < x.data.size(); ++i)
        if (x.data[i] <= 0.0) dx.data[i] = 0.0;
    return dx;
}

// ---- maxpool2d ----

/// Records, per output cell, the flat input index of the max (ties broken by
/// first index in window scan order, which backward routing relies on).
inline Tensor maxpool2d_forward(const Tensor& x, std::size_t f, std::size_t stride,
                                std::vector<std::size_t>& argmax) {
    const std::size_t b = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3];
    const std::size_t ho = (h - f) / stride + 1, wo = (wd - f) / stride + 1;
    Tensor y({b, c, ho, wo});
    argmax.assign(y.numel(), 0);
    for (std::size_t n = 0; n < b; ++n)
        for (std::size_t ch = 0; ch < c; ++ch)
            for (std::size_t p = 0; p < ho; ++p)
                for (std::size_t q = 0; q < wo; ++q) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t best_idx = 0;
                    for (std::size_t f1 = 0; f1 < f; ++f1)
                        for (std::size_t f2 = 0; f2 < f; ++f2) {
                            const std::size_t xi =
                                ((n * c + ch) * h + p * stride + f1) * wd +
                                q * stride + f2;
                            if (x.data[xi] > best) {
                                best = x.data[xi];
                                best_idx = xi;
                            }
                        }
                    const std::size_t yi = ((n * c + ch) * ho + p) * wo + q;
                    y.data[yi] = best;
                    argmax[yi] = best_idx;
                }
    return y;
}

inline Tensor maxpool2d_backward(const std::vector<std::size_t>& argmax,
                                 const std::vector<std::size_t>& in_shape,
                                 const Tensor& dy) {
    Tensor dx(in_shape);
    for (std::size_t i = 0; i < dy.numel(); ++i) dx.data[argmax[i]] += dy.data[i];
    return dx;
}

// ---- flatten ----

inline Tensor flatten_forward(const Tensor& x) {
    std::size_t rest = 1;
    for (std::size_t i = 1; i < x.shape.size(); ++i) rest *= x.shape[i];
    return x.reshaped({x.shape[0], rest});
}

}  // namespace ffl
