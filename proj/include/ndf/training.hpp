#pragma once

// Fitting a dependence-field model to ensemble data: sampled position pairs,
// measure targets, mini-batch Adam with a plateau schedule, validation PSNR.

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndf/correlation.hpp"
#include "ndf/ensemble.hpp"
#include "ndf/model.hpp"

namespace ndf {

enum class LossKind { L1, L2 };

std::string to_string(LossKind kind);
LossKind loss_kind_from_string(const std::string& name);

struct TrainingConfig {
    std::size_t samples_per_epoch = 100000;
    std::size_t batch_size = 1000;
    int epochs = 50;
    double learning_rate = 3e-4;
    double scheduler_factor = 0.1;
    int scheduler_patience = 5;
    LossKind loss = LossKind::L1;
    std::uint64_t seed = 1;
    std::size_t validation_samples = 100000;
    bool validation_on_grid = false;  // snap validation pairs to ensemble nodes
    CorrelationMeasure measure;
    std::string var_mu = "v0";
    std::string var_nu = "v0";
    int max_resample = 16;  // redraws of a pair whose target is degenerate
    unsigned threads = 0;   // target computation workers (0: all cores)

    /// 10^6 samples and validation pairs, 200 epochs.
    static TrainingConfig full_scale_defaults();
    /// 10^5 pairs per epoch, 50 epochs, lr 3e-3: about 5000 Adam steps need
    /// a larger step than the 200k-step schedule.
    static TrainingConfig desk_defaults();
    void validate() const;
};

nlohmann::json to_json(const TrainingConfig& c);
/// Missing keys keep the values of `base`. Throws ConfigError on bad values.
TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig base = {});

/// Position pairs with their measure targets, stored column-wise.
struct PairSet {
    std::vector<Vec3> p_mu;
    std::vector<Vec3> p_nu;
    std::vector<double> target;
    std::size_t resampled = 0;  // pairs redrawn because the target was degenerate

    std::size_t size() const { return target.size(); }
};

/// measure(e^mu(p_mu), e^nu(p_nu)).
double pair_target(const EnsembleField& field, const CorrelationMeasure& measure,
                   std::size_t var_mu, std::size_t var_nu, const Vec3& p_mu, const Vec3& p_nu);

/// Uniform pairs on [-1,1]^3 x [-1,1]^3 and their targets. The result depends
/// only on (config.seed, stream, count), not on the worker count.
PairSet make_pair_set(const EnsembleField& field, const TrainingConfig& config,
                      std::uint64_t stream, std::size_t count, bool on_grid = false);

/// The pairs of training epoch `epoch`.
PairSet make_training_batch(const EnsembleField& field, const TrainingConfig& config, int epoch);
/// Validation pairs, drawn from a stream disjoint from every epoch.
PairSet make_validation_set(const EnsembleField& field, const TrainingConfig& config);

/// 10 log10(peak^2 / MSE), capped at 200 dB. Default peak is the truth range
/// (floored at 1e-6). Throws ParameterError on empty input or peak <= 0.
double psnr(std::span<const double> predicted, std::span<const double> truth,
            std::optional<double> peak = std::nullopt);

struct Evaluation {
    double l1 = 0;
    double mse = 0;
    double psnr_db = 0;

    double loss(LossKind kind) const { return kind == LossKind::L1 ? l1 : mse; }
};

Evaluation evaluate(const NdfModel<float>& model, const PairSet& pairs);

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0;
    double validation_loss = 0;
    double validation_psnr = 0;
    double learning_rate = 0;
    double seconds = 0;
};

struct TrainedArtifact {
    NdfModel<float> model;  // best-validation checkpoint
    std::vector<EpochRecord> history;
    TrainingConfig config;
    int best_epoch = 0;
    double seconds = 0;

    const EpochRecord& best() const { return history.at(static_cast<std::size_t>(best_epoch)); }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Builds a model from `architecture` (variables and measure taken from the
/// config), trains it and returns the best-validation checkpoint.
/// Throws TrainingError on a non-finite loss or gradient.
TrainedArtifact train(const EnsembleField& field, ArchitectureDescriptor architecture,
                      const TrainingConfig& config, const EpochCallback& on_epoch = {});

struct SweepCell {
    int log2_table_size = 0;
    int layers = 0;
    int channels = 0;
    double psnr_db = 0;
    std::size_t model_bytes = 0;
    double train_seconds = 0;
    std::string error;  // empty on success
};

/// Trains every (T, (layers, channels)) combination with identical data and
/// seeds. A failing cell records its error and the sweep continues.
std::vector<SweepCell> sweep(const EnsembleField& field, const ArchitectureDescriptor& base,
                             const TrainingConfig& config, const std::vector<int>& table_bits,
                             const std::vector<std::pair<int, int>>& mlp_shapes);

/// Header: T,layers,channels,psnr_db,model_bytes,train_seconds
void write_sweep_csv(const std::vector<SweepCell>& cells, std::ostream& out);

} // namespace ndf
