#include "ndf/mlp.hpp"

#include <algorithm>

#include "ndf/error.hpp"

namespace ndf {

std::string to_string(Activation a) {
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Snake: return "snake";
    case Activation::SnakeAlt: return "snake_alt";
    }
    return "unknown";
}

Activation activation_from_string(const std::string& name) {
    if (name == "relu") return Activation::ReLU;
    if (name == "snake") return Activation::Snake;
    if (name == "snake_alt" || name == "snakealt") return Activation::SnakeAlt;
    throw ConfigError("unknown activation '" + name + "'");
}

namespace {

constexpr std::size_t kColumnTile = 256;

/// sum_b a[b] * c[b] with eight interleaved partial sums (fixed order).
template <typename S>
S dot(const S* a, const S* c, std::size_t n) {
    S acc[8] = {};
    std::size_t b = 0;
    for (; b + 8 <= n; b += 8) {
        for (int j = 0; j < 8; ++j) acc[j] += a[b + j] * c[b + j];
    }
    for (; b < n; ++b) acc[0] += a[b] * c[b];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

template <typename S>
S sum(const S* a, std::size_t n) {
    S acc[8] = {};
    std::size_t b = 0;
    for (; b + 8 <= n; b += 8) {
        for (int j = 0; j < 8; ++j) acc[j] += a[b + j];
    }
    for (; b < n; ++b) acc[0] += a[b];
    return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
}

} // namespace

template <typename S>
void dense_forward(const DenseLayer<S>& layer, const FeatureMatrix<S>& x, FeatureMatrix<S>& y) {
    if (x.rows() != layer.in) {
        throw ShapeError("dense layer expects " + std::to_string(layer.in) + " inputs, got " +
                         std::to_string(x.rows()));
    }
    const std::size_t batch = x.cols();
    const std::size_t in = layer.in;
    y.resize(layer.out, batch);
    const S* w = layer.weight.data();

    for (std::size_t b0 = 0; b0 < batch; b0 += kColumnTile) {
        const std::size_t n = std::min(kColumnTile, batch - b0);
        std::size_t o = 0;
        for (; o + 4 <= layer.out; o += 4) {
            S* y0 = y.row(o) + b0;
            S* y1 = y.row(o + 1) + b0;
            S* y2 = y.row(o + 2) + b0;
            S* y3 = y.row(o + 3) + b0;
            std::fill(y0, y0 + n, layer.bias[o]);
            std::fill(y1, y1 + n, layer.bias[o + 1]);
            std::fill(y2, y2 + n, layer.bias[o + 2]);
            std::fill(y3, y3 + n, layer.bias[o + 3]);
            for (std::size_t i = 0; i < in; ++i) {
                const S w0 = w[o * in + i], w1 = w[(o + 1) * in + i];
                const S w2 = w[(o + 2) * in + i], w3 = w[(o + 3) * in + i];
                const S* xr = x.row(i) + b0;
                for (std::size_t b = 0; b < n; ++b) {
                    const S v = xr[b];
                    y0[b] += w0 * v;
                    y1[b] += w1 * v;
                    y2[b] += w2 * v;
                    y3[b] += w3 * v;
                }
            }
        }
        for (; o < layer.out; ++o) {
            S* yr = y.row(o) + b0;
            std::fill(yr, yr + n, layer.bias[o]);
            for (std::size_t i = 0; i < in; ++i) {
                const S wi = w[o * in + i];
                const S* xr = x.row(i) + b0;
                for (std::size_t b = 0; b < n; ++b) yr[b] += wi * xr[b];
            }
        }
    }
}

template <typename S>
Mlp<S>::Mlp(const std::vector<std::uint32_t>& widths, Activation activation)
    : activation_(activation) {
    if (widths.size() < 2) throw ShapeError("an MLP needs at least an input and output width");
    for (auto w : widths) {
        if (w == 0) throw ShapeError("MLP widths must be positive");
    }
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        layers_.emplace_back(widths[l], widths[l + 1]);
    }
}

template <typename S>
std::size_t Mlp<S>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers_) n += l.weight.size() + l.bias.size();
    return n;
}

template <typename S>
void Mlp<S>::initialize(std::mt19937_64& rng) {
    for (auto& layer : layers_) {
        const double bound = std::sqrt(6.0 / static_cast<double>(layer.in));
        std::uniform_real_distribution<double> u(-bound, bound);
        for (auto& w : layer.weight) w = static_cast<S>(u(rng));
        std::fill(layer.bias.begin(), layer.bias.end(), S(0));
    }
}

template <typename S>
void Mlp<S>::forward(const FeatureMatrix<S>& x, FeatureMatrix<S>& y, MlpTape<S>* tape) const {
    const std::size_t count = layers_.size();
    if (x.rows() != input_width()) {
        throw ShapeError("MLP expects " + std::to_string(input_width()) + " inputs, got " +
                         std::to_string(x.rows()));
    }
    FeatureMatrix<S> ping, pong;
    if (tape) {
        tape->inputs.resize(count);
        tape->derivatives.resize(count - 1);
        tape->inputs[0] = x;
    }
    const FeatureMatrix<S>* current = &x;
    for (std::size_t l = 0; l < count; ++l) {
        const bool last = l + 1 == count;
        FeatureMatrix<S>& out =
            last ? y : (tape ? tape->inputs[l + 1] : (l % 2 == 0 ? ping : pong));
        dense_forward(layers_[l], *current, out);
        if (!last) {
            auto values = out.data();
            if (tape) {
                auto& slope = tape->derivatives[l];
                slope.resize(out.rows(), out.cols());
                auto d = slope.data();
                for (std::size_t k = 0; k < values.size(); ++k) {
                    d[k] = activate_derivative(activation_, values[k]);
                }
            }
            for (auto& v : values) v = activate(activation_, v);
        }
        current = &out;
    }
}

template <typename S>
std::vector<S> Mlp<S>::forward(std::span<const S> x) const {
    FeatureMatrix<S> in(x.size(), 1), out;
    for (std::size_t i = 0; i < x.size(); ++i) in(i, 0) = x[i];
    forward(in, out);
    std::vector<S> y(out.rows());
    for (std::size_t i = 0; i < y.size(); ++i) y[i] = out(i, 0);
    return y;
}

template <typename S>
void Mlp<S>::backward(const MlpTape<S>& tape, const FeatureMatrix<S>& dy, MlpGradient<S>& grad,
                      FeatureMatrix<S>* dx, std::size_t first_input_row) const {
    const std::size_t count = layers_.size();
    if (tape.inputs.size() != count || grad.size() != count) {
        throw ShapeError("MLP backward: tape or gradient does not match the network");
    }
    const std::size_t batch = tape.inputs[0].cols();
    if (dy.rows() != output_width() || dy.cols() != batch) {
        throw ShapeError("MLP backward: upstream gradient has wrong shape");
    }

    FeatureMatrix<S> delta = dy;  // gradient w.r.t. the current layer's pre-activation
    FeatureMatrix<S> previous;
    for (std::size_t l = count; l-- > 0;) {
        const auto& layer = layers_[l];
        const auto& x = tape.inputs[l];
        auto& g = grad[l];
        for (std::size_t o = 0; o < layer.out; ++o) {
            const S* d = delta.row(o);
            for (std::size_t i = 0; i < layer.in; ++i) {
                g.weight[o * layer.in + i] += dot(d, x.row(i), batch);
            }
            g.bias[o] += sum(d, batch);
        }

        const bool want_input = l > 0 || dx != nullptr;
        if (!want_input) break;
        FeatureMatrix<S>& target = l > 0 ? previous : *dx;
        const std::size_t first = l > 0 ? 0 : std::min<std::size_t>(first_input_row, layer.in);
        target.resize(layer.in, batch);
        target.fill(S(0));
        for (std::size_t o = 0; o < layer.out; ++o) {
            const S* d = delta.row(o);
            for (std::size_t i = first; i < layer.in; ++i) {
                const S w = layer.weight[o * layer.in + i];
                S* t = target.row(i);
                for (std::size_t b = 0; b < batch; ++b) t[b] += w * d[b];
            }
        }
        if (l > 0) {
            const auto slope = tape.derivatives[l - 1].data();
            auto p = previous.data();
            for (std::size_t k = 0; k < p.size(); ++k) p[k] *= slope[k];
            std::swap(delta, previous);
        }
    }
}

template <typename S>
MlpGradient<S> Mlp<S>::zero_gradient() const {
    MlpGradient<S> g;
    for (const auto& l : layers_) g.emplace_back(l.in, l.out);
    return g;
}

template <typename S>
std::vector<std::span<S>> Mlp<S>::parameter_blocks() {
    std::vector<std::span<S>> blocks;
    for (auto& l : layers_) {
        blocks.emplace_back(l.weight);
        blocks.emplace_back(l.bias);
    }
    return blocks;
}

template <typename S>
std::vector<std::span<const S>> Mlp<S>::parameter_blocks() const {
    std::vector<std::span<const S>> blocks;
    for (const auto& l : layers_) {
        blocks.emplace_back(l.weight);
        blocks.emplace_back(l.bias);
    }
    return blocks;
}

template <typename S>
std::vector<std::span<S>> gradient_blocks(MlpGradient<S>& grad) {
    std::vector<std::span<S>> blocks;
    for (auto& l : grad) {
        blocks.emplace_back(l.weight);
        blocks.emplace_back(l.bias);
    }
    return blocks;
}

template class Mlp<float>;
template class Mlp<double>;
template void dense_forward(const DenseLayer<float>&, const FeatureMatrix<float>&,
                            FeatureMatrix<float>&);
template void dense_forward(const DenseLayer<double>&, const FeatureMatrix<double>&,
                            FeatureMatrix<double>&);
template std::vector<std::span<float>> gradient_blocks(MlpGradient<float>&);
template std::vector<std::span<double>> gradient_blocks(MlpGradient<double>&);

} // namespace ndf
