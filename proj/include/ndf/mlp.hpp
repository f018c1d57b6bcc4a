#pragma once

// Dense multi-layer perceptron with manual reverse-mode gradients.

#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "ndf/feature_matrix.hpp"

namespace ndf {

enum class Activation { ReLU, Snake, SnakeAlt };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& name);

/// snake(x) = x + sin^2(x); snake_alt(x) = (x + 1 - cos 2x) / 2 = x/2 + sin^2(x).
template <typename S>
S activate(Activation kind, S x) {
    switch (kind) {
    case Activation::ReLU: return x > S(0) ? x : S(0);
    case Activation::Snake: {
        const S s = std::sin(x);
        return x + s * s;
    }
    case Activation::SnakeAlt: {
        const S s = std::sin(x);
        return S(0.5) * x + s * s;
    }
    }
    return x;
}

template <typename S>
S activate_derivative(Activation kind, S x) {
    switch (kind) {
    case Activation::ReLU: return x > S(0) ? S(1) : S(0);
    case Activation::Snake: return S(1) + std::sin(S(2) * x);
    case Activation::SnakeAlt: return S(0.5) + std::sin(S(2) * x);
    }
    return S(1);
}

/// y = W x + b with W stored row-major (out x in).
template <typename S>
struct DenseLayer {
    std::uint32_t in = 0;
    std::uint32_t out = 0;
    std::vector<S> weight;
    std::vector<S> bias;

    DenseLayer() = default;
    DenseLayer(std::uint32_t in_width, std::uint32_t out_width)
        : in(in_width), out(out_width), weight(std::size_t{in_width} * out_width, S(0)),
          bias(out_width, S(0)) {}
};

/// Per-layer gradients, shaped like the network's layers.
template <typename S>
using MlpGradient = std::vector<DenseLayer<S>>;

/// Intermediate values recorded by a training forward pass.
template <typename S>
struct MlpTape {
    std::vector<FeatureMatrix<S>> inputs;       // input of every layer
    std::vector<FeatureMatrix<S>> derivatives;  // activation slope of every hidden layer
};

template <typename S>
class Mlp {
public:
    Mlp() = default;
    /// widths = {input, hidden..., output}; every layer except the last is
    /// followed by `activation`.
    Mlp(const std::vector<std::uint32_t>& widths, Activation activation);

    std::uint32_t input_width() const { return layers_.front().in; }
    std::uint32_t output_width() const { return layers_.back().out; }
    std::size_t layer_count() const { return layers_.size(); }
    Activation activation() const { return activation_; }
    std::size_t parameter_count() const;

    std::vector<DenseLayer<S>>& layers() { return layers_; }
    const std::vector<DenseLayer<S>>& layers() const { return layers_; }

    /// Kaiming-style uniform weights U(-sqrt(6/fan_in), +sqrt(6/fan_in)), zero biases.
    void initialize(std::mt19937_64& rng);

    /// Evaluates a batch; pass a tape to record what backward() needs.
    void forward(const FeatureMatrix<S>& x, FeatureMatrix<S>& y, MlpTape<S>* tape = nullptr) const;
    std::vector<S> forward(std::span<const S> x) const;

    /// Accumulates parameter gradients into `grad` and, when `dx` is given,
    /// writes input gradients for rows >= first_input_row (other rows are zero).
    void backward(const MlpTape<S>& tape, const FeatureMatrix<S>& dy, MlpGradient<S>& grad,
                  FeatureMatrix<S>* dx = nullptr, std::size_t first_input_row = 0) const;

    MlpGradient<S> zero_gradient() const;

    /// Weight then bias of every layer, in order.
    std::vector<std::span<S>> parameter_blocks();
    std::vector<std::span<const S>> parameter_blocks() const;

private:
    std::vector<DenseLayer<S>> layers_;
    Activation activation_ = Activation::SnakeAlt;
};

/// Gradient blocks in the same order as Mlp::parameter_blocks().
template <typename S>
std::vector<std::span<S>> gradient_blocks(MlpGradient<S>& grad);

/// y = W x + b over a batch. Each output sums its inputs in index order.
template <typename S>
void dense_forward(const DenseLayer<S>& layer, const FeatureMatrix<S>& x, FeatureMatrix<S>& y);

extern template class Mlp<float>;
extern template class Mlp<double>;

} // namespace ndf
