#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "mclnn/mask.hpp"
#include "mclnn/matrix.hpp"

namespace mclnn {

enum class Transfer { Identity, Prelu };
enum class PoolMode { Mean, Max, Flatten };

inline std::string pool_mode_name(PoolMode m) {
    switch (m) {
        case PoolMode::Mean: return "mean";
        case PoolMode::Max: return "max";
        default: return "flatten";
    }
}

inline PoolMode pool_mode_from_name(const std::string& s) {
    if (s == "mean") return PoolMode::Mean;
    if (s == "max") return PoolMode::Max;
    if (s == "flatten") return PoolMode::Flatten;
    throw std::invalid_argument("unknown pool mode: " + s);
}

inline double prelu_forward(double x, double slope) {
    return x > 0.0 ? x : slope * x;
}

// d/dx and d/dslope at a point. The kink at 0 takes the slope branch.
inline double prelu_dx(double x, double slope) { return x > 0.0 ? 1.0 : slope; }
inline double prelu_dslope(double x) { return x > 0.0 ? 0.0 : x; }

// Conditional layer: one weight matrix per window position u in [-n, n],
// all l x e, summed over the window and passed through the transfer.
// With a mask attached the effective weights are W_u . M at every pass,
// so optimizer updates can never leak into masked positions.
struct ClnnLayer {
    int order = 1;        // n
    int in_features = 0;  // l
    int width = 0;        // e
    std::vector<Matrix> weights; // 2n+1 matrices, index u+n
    std::vector<double> bias;    // e
    std::vector<double> slope;   // e, used when transfer == Prelu
    Transfer transfer = Transfer::Prelu;
    std::optional<BinaryMask> mask;

    int window_width() const { return 2 * order + 1; }

    void validate() const {
        if (order < 1) throw std::invalid_argument("ClnnLayer: order must be >= 1");
        if (static_cast<int>(weights.size()) != window_width())
            throw std::invalid_argument("ClnnLayer: expected " + std::to_string(window_width()) +
                                        " weight matrices");
        for (const Matrix& w : weights)
            if (w.rows() != in_features || w.cols() != width)
                throw std::invalid_argument("ClnnLayer: weight shape mismatch");
        if (mask && (mask->matrix.rows() != in_features || mask->matrix.cols() != width))
            throw std::invalid_argument("ClnnLayer: mask shape mismatch");
    }

    Matrix effective_weight(int idx) const {
        return mask ? mask_weights(weights[idx], *mask) : weights[idx];
    }

    // Re-zero masked weight positions in place.
    void apply_mask() {
        if (!mask) return;
        for (Matrix& w : weights)
            for (size_t i = 0; i < w.size(); ++i)
                if (mask->matrix.at_linear(i) == 0.0) w.at_linear(i) = 0.0;
    }
};

struct ClnnForward {
    Matrix output;  // e x (w - 2n)
    Matrix preact;  // e x (w - 2n), before the transfer
};

// y[j] = f(b[j] + sum_u sum_i x[i, u] * W_u[i, j]) for a single window.
inline std::vector<double> clnn_window_forward(const Matrix& window, const ClnnLayer& layer) {
    layer.validate();
    if (window.rows() != layer.in_features || window.cols() != layer.window_width())
        throw std::invalid_argument("clnn_window_forward: window must be " +
                                    std::to_string(layer.in_features) + "x" +
                                    std::to_string(layer.window_width()) + ", got " +
                                    shape_str(window));
    std::vector<double> acc(layer.bias);
    for (int u = 0; u < layer.window_width(); ++u) {
        Matrix w = layer.effective_weight(u);
        for (int j = 0; j < layer.width; ++j) {
            const double* col = w.col(j);
            double s = 0.0;
            for (int i = 0; i < layer.in_features; ++i)
                s += window(i, u) * col[i];
            acc[j] += s;
        }
    }
    if (layer.transfer == Transfer::Prelu)
        for (int j = 0; j < layer.width; ++j)
            acc[j] = prelu_forward(acc[j], layer.slope[j]);
    return acc;
}

// Slide the window over an l x w segment; output column t comes from input
// columns [t, t+2n], so the output has 2n fewer frames than the input.
inline ClnnForward clnn_layer_forward_cached(const Matrix& segment, const ClnnLayer& layer) {
    layer.validate();
    if (segment.rows() != layer.in_features)
        throw std::invalid_argument("clnn_layer_forward: segment has " +
                                    std::to_string(segment.rows()) + " features, layer expects " +
                                    std::to_string(layer.in_features));
    const int w = segment.cols();
    const int d = layer.window_width();
    if (w < d)
        throw std::invalid_argument("segment too short for order n: width " + std::to_string(w) +
                                    " < " + std::to_string(d));
    const int out_w = w - 2 * layer.order;

    ClnnForward fwd;
    fwd.preact = Matrix(layer.width, out_w);
    for (int t = 0; t < out_w; ++t)
        for (int j = 0; j < layer.width; ++j)
            fwd.preact(j, t) = layer.bias[j];

    for (int u = 0; u < d; ++u) {
        Matrix wm = layer.effective_weight(u);
        for (int t = 0; t < out_w; ++t) {
            const double* x = segment.col(t + u);
            double* pre = fwd.preact.col(t);
            for (int j = 0; j < layer.width; ++j) {
                const double* col = wm.col(j);
                double s = 0.0;
                for (int i = 0; i < layer.in_features; ++i)
                    s += x[i] * col[i];
                pre[j] += s;
            }
        }
    }

    fwd.output = fwd.preact;
    if (layer.transfer == Transfer::Prelu)
        for (int t = 0; t < out_w; ++t)
            for (int j = 0; j < layer.width; ++j)
                fwd.output(j, t) = prelu_forward(fwd.preact(j, t), layer.slope[j]);
    return fwd;
}

inline Matrix clnn_layer_forward(const Matrix& segment, const ClnnLayer& layer) {
    return clnn_layer_forward_cached(segment, layer).output;
}

struct ClnnGrads {
    std::vector<Matrix> weights;
    std::vector<double> bias;
    std::vector<double> slope;
    Matrix input; // l x w
};

// Exact gradients through the sliding window. For masked layers the weight
// gradient is multiplied by the mask (chain rule through the element-wise
// product), so masked positions stay exactly zero.
inline ClnnGrads clnn_layer_backward(const Matrix& segment, const ClnnLayer& layer,
                                     const Matrix& preact, const Matrix& grad_out) {
    layer.validate();
    const int w = segment.cols();
    const int out_w = w - 2 * layer.order;
    if (grad_out.rows() != layer.width || grad_out.cols() != out_w)
        throw std::invalid_argument("clnn_layer_backward: grad_out shape mismatch");
    if (!preact.same_shape(grad_out))
        throw std::invalid_argument("clnn_layer_backward: preact shape mismatch");

    ClnnGrads g;
    g.weights.assign(layer.window_width(), Matrix(layer.in_features, layer.width));
    g.bias.assign(layer.width, 0.0);
    g.slope.assign(layer.width, 0.0);
    g.input = Matrix(layer.in_features, w);

    // grad through the transfer
    Matrix dpre(layer.width, out_w);
    for (int t = 0; t < out_w; ++t) {
        for (int j = 0; j < layer.width; ++j) {
            double go = grad_out(j, t);
            if (layer.transfer == Transfer::Prelu) {
                dpre(j, t) = go * prelu_dx(preact(j, t), layer.slope[j]);
                g.slope[j] += go * prelu_dslope(preact(j, t));
            } else {
                dpre(j, t) = go;
            }
            g.bias[j] += dpre(j, t);
        }
    }

    for (int u = 0; u < layer.window_width(); ++u) {
        Matrix& gw = g.weights[u];
        Matrix wm = layer.effective_weight(u);
        for (int t = 0; t < out_w; ++t) {
            const double* x = segment.col(t + u);
            const double* dp = dpre.col(t);
            double* gin = g.input.col(t + u);
            for (int j = 0; j < layer.width; ++j) {
                const double d = dp[j];
                if (d == 0.0) continue;
                double* gwc = gw.col(j);
                const double* wc = wm.col(j);
                for (int i = 0; i < layer.in_features; ++i) {
                    gwc[i] += x[i] * d;
                    gin[i] += wc[i] * d;
                }
            }
        }
    }

    if (layer.mask)
        for (Matrix& gw : g.weights)
            gw = mask_weights(gw, *layer.mask);
    return g;
}

struct PoolForward {
    std::vector<double> output;
    std::vector<int> argmax; // per feature, Max mode only
};

// Feature-wise reduction across the k frames that survive the conditional
// layers. Flatten concatenates columns instead.
inline PoolForward temporal_pool_cached(const Matrix& block, PoolMode mode) {
    const int e = block.rows();
    const int k = block.cols();
    if (k < 1) throw std::invalid_argument("temporal_pool: need at least one frame");
    PoolForward fwd;
    switch (mode) {
        case PoolMode::Mean:
            fwd.output.assign(e, 0.0);
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < e; ++j)
                    fwd.output[j] += block(j, t);
            for (double& v : fwd.output) v /= k;
            break;
        case PoolMode::Max:
            fwd.output.assign(e, 0.0);
            fwd.argmax.assign(e, 0);
            for (int j = 0; j < e; ++j) {
                double best = block(j, 0);
                int arg = 0;
                for (int t = 1; t < k; ++t)
                    if (block(j, t) > best) { best = block(j, t); arg = t; }
                fwd.output[j] = best;
                fwd.argmax[j] = arg;
            }
            break;
        case PoolMode::Flatten:
            fwd.output.reserve(static_cast<size_t>(e) * k);
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < e; ++j)
                    fwd.output.push_back(block(j, t));
            break;
    }
    return fwd;
}

inline std::vector<double> temporal_pool(const Matrix& block, PoolMode mode) {
    return temporal_pool_cached(block, mode).output;
}

inline Matrix temporal_pool_backward(const PoolForward& fwd, PoolMode mode, int e, int k,
                                     const std::vector<double>& grad_out) {
    Matrix g(e, k);
    switch (mode) {
        case PoolMode::Mean:
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < e; ++j)
                    g(j, t) = grad_out[j] / k;
            break;
        case PoolMode::Max:
            for (int j = 0; j < e; ++j)
                g(j, fwd.argmax[j]) = grad_out[j];
            break;
        case PoolMode::Flatten:
            for (int t = 0; t < k; ++t)
                for (int j = 0; j < e; ++j)
                    g(j, t) = grad_out[static_cast<size_t>(t) * e + j];
            break;
    }
    return g;
}

// Fully-connected layer, y = f(W^T x + b) with W stored in x out.
struct DenseLayer {
    int in_features = 0;
    int width = 0;
    Matrix weights;            // in x out
    std::vector<double> bias;  // out
    std::vector<double> slope; // out
    Transfer transfer = Transfer::Prelu;
};

struct DenseForward {
    std::vector<double> preact;
    std::vector<double> output;
};

inline DenseForward dense_forward_cached(const std::vector<double>& x, const DenseLayer& layer) {
    if (static_cast<int>(x.size()) != layer.in_features)
        throw std::invalid_argument("dense_forward: input length mismatch");
    DenseForward fwd;
    fwd.preact = matvec(layer.weights, x);
    for (int j = 0; j < layer.width; ++j)
        fwd.preact[j] += layer.bias[j];
    fwd.output = fwd.preact;
    if (layer.transfer == Transfer::Prelu)
        for (int j = 0; j < layer.width; ++j)
            fwd.output[j] = prelu_forward(fwd.preact[j], layer.slope[j]);
    return fwd;
}

inline std::vector<double> dense_forward(const std::vector<double>& x, const DenseLayer& layer) {
    return dense_forward_cached(x, layer).output;
}

struct DenseGrads {
    Matrix weights;
    std::vector<double> bias;
    std::vector<double> slope;
    std::vector<double> input;
};

inline DenseGrads dense_backward(const std::vector<double>& x, const DenseLayer& layer,
                                 const DenseForward& fwd, const std::vector<double>& grad_out) {
    if (static_cast<int>(grad_out.size()) != layer.width)
        throw std::invalid_argument("dense_backward: grad_out length mismatch");
    DenseGrads g;
    g.weights = Matrix(layer.in_features, layer.width);
    g.bias.assign(layer.width, 0.0);
    g.slope.assign(layer.width, 0.0);
    g.input.assign(layer.in_features, 0.0);
    for (int j = 0; j < layer.width; ++j) {
        double d = grad_out[j];
        if (layer.transfer == Transfer::Prelu) {
            g.slope[j] = d * prelu_dslope(fwd.preact[j]);
            d *= prelu_dx(fwd.preact[j], layer.slope[j]);
        }
        g.bias[j] = d;
        double* gw = g.weights.col(j);
        const double* wc = layer.weights.col(j);
        for (int i = 0; i < layer.in_features; ++i) {
            gw[i] = x[i] * d;
            g.input[i] += wc[i] * d;
        }
    }
    return g;
}

// Max-subtraction stabilized softmax.
inline std::vector<double> softmax(const std::vector<double>& x) {
    if (x.empty()) throw std::invalid_argument("softmax: empty input");
    double mx = *std::max_element(x.begin(), x.end());
    std::vector<double> out(x.size());
    double sum = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        out[i] = std::exp(x[i] - mx);
        sum += out[i];
    }
    for (double& v : out) v /= sum;
    return out;
}

struct DropoutResult {
    std::vector<double> output;
    std::vector<double> scale; // per unit: 0 if dropped, 1/(1-rate) if kept
};

// Inverted dropout: survivors are scaled at training time so that inference
// is a plain identity.
inline DropoutResult dropout(const std::vector<double>& x, double rate, Rng& rng, bool training) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout: rate must be in [0, 1)");
    DropoutResult r;
    r.output = x;
    r.scale.assign(x.size(), 1.0);
    if (!training || rate == 0.0) return r;
    const double keep_scale = 1.0 / (1.0 - rate);
    for (size_t i = 0; i < x.size(); ++i) {
        if (rng.next_double() < rate) {
            r.scale[i] = 0.0;
            r.output[i] = 0.0;
        } else {
            r.scale[i] = keep_scale;
            r.output[i] *= keep_scale;
        }
    }
    return r;
}

} // namespace mclnn
