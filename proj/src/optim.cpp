#include "ndf/optim.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ndf/error.hpp"

namespace ndf {

template <typename S>
Adam<S>::Adam(const std::vector<std::size_t>& block_sizes, AdamConfig config)
    : config_(config) {
    for (auto n : block_sizes) {
        first_.emplace_back(n, S(0));
        second_.emplace_back(n, S(0));
    }
}

template <typename S>
void Adam<S>::step(const std::vector<std::span<S>>& params,
                   const std::vector<std::span<S>>& grads) {
    if (params.size() != first_.size() || grads.size() != first_.size()) {
        throw ShapeError("adam: parameter block count mismatch");
    }
    for (std::size_t k = 0; k < grads.size(); ++k) {
        if (params[k].size() != first_[k].size() || grads[k].size() != first_[k].size()) {
            throw ShapeError("adam: block " + std::to_string(k) + " has the wrong size");
        }
        for (std::size_t i = 0; i < grads[k].size(); ++i) {
            if (!std::isfinite(grads[k][i])) {
                throw TrainingError("adam: non-finite gradient in block " + std::to_string(k) +
                                    " at index " + std::to_string(i) + " (step " +
                                    std::to_string(steps_ + 1) + ")");
            }
        }
    }

    ++steps_;
    const double t = static_cast<double>(steps_);
    const S b1 = static_cast<S>(config_.beta1);
    const S b2 = static_cast<S>(config_.beta2);
    const S step_size =
        static_cast<S>(config_.learning_rate / (1.0 - std::pow(config_.beta1, t)));
    const S root_correction = static_cast<S>(1.0 / std::sqrt(1.0 - std::pow(config_.beta2, t)));
    const S eps = static_cast<S>(config_.epsilon);
    for (std::size_t k = 0; k < params.size(); ++k) {
        S* p = params[k].data();
        const S* g = grads[k].data();
        S* m = first_[k].data();
        S* v = second_[k].data();
        const std::size_t n = params[k].size();
        for (std::size_t i = 0; i < n; ++i) {
            m[i] = b1 * m[i] + (S(1) - b1) * g[i];
            v[i] = b2 * v[i] + (S(1) - b2) * g[i] * g[i];
            p[i] -= step_size * m[i] / (std::sqrt(v[i]) * root_correction + eps);
        }
    }
}

PlateauScheduler::PlateauScheduler(double factor, int patience, double threshold)
    : factor_(factor), patience_(patience), threshold_(threshold),
      best_(std::numeric_limits<double>::infinity()) {
    if (!(factor > 0.0 && factor < 1.0)) throw ParameterError("scheduler factor must be in (0,1)");
    if (patience < 1) throw ParameterError("scheduler patience must be >= 1");
}

double PlateauScheduler::step(double metric, double learning_rate) {
    if (!std::isfinite(metric)) throw ParameterError("scheduler metric must be finite");
    if (metric < best_ - threshold_) {
        best_ = metric;
        stalled_ = 0;
        return learning_rate;
    }
    if (++stalled_ >= patience_) {
        stalled_ = 0;
        return learning_rate * factor_;
    }
    return learning_rate;
}

template class Adam<float>;
template class Adam<double>;

} // namespace ndf
