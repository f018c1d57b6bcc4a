#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace ndf {

struct AdamConfig {
    double learning_rate = 3e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// Adam with bias correction over a fixed list of parameter blocks.
template <typename S>
class Adam {
public:
    Adam(const std::vector<std::size_t>& block_sizes, AdamConfig config = {});

    /// Throws TrainingError on a non-finite gradient, before touching any parameter.
    void step(const std::vector<std::span<S>>& params, const std::vector<std::span<S>>& grads);

    double learning_rate() const { return config_.learning_rate; }
    void set_learning_rate(double lr) { config_.learning_rate = lr; }
    std::uint64_t step_count() const { return steps_; }
    const AdamConfig& config() const { return config_; }

private:
    AdamConfig config_;
    std::uint64_t steps_ = 0;
    std::vector<std::vector<S>> first_;
    std::vector<std::vector<S>> second_;
};

/// Multiplies the learning rate by `factor` once the metric has failed to
/// improve (decrease by at least `threshold`) for `patience` consecutive calls.
class PlateauScheduler {
public:
    explicit PlateauScheduler(double factor = 0.1, int patience = 5, double threshold = 1e-6);

    /// Returns the learning rate to use next.
    double step(double metric, double learning_rate);

    double best() const { return best_; }
    int stalled() const { return stalled_; }

private:
    double factor_;
    int patience_;
    double threshold_;
    double best_;
    int stalled_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

} // namespace ndf
