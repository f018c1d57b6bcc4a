#include "ndf/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>

#include <spdlog/spdlog.h>

#include "ndf/error.hpp"
#include "ndf/optim.hpp"
#include "ndf/parallel.hpp"

namespace ndf {

namespace {

constexpr std::uint64_t kValidationStream = 0x56414c4944ull;  // never an epoch index

double seconds_since(std::chrono::steady_clock::time_point start) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

} // namespace

std::string to_string(LossKind kind) { return kind == LossKind::L1 ? "l1" : "l2"; }

LossKind loss_kind_from_string(const std::string& name) {
    if (name == "l1") return LossKind::L1;
    if (name == "l2") return LossKind::L2;
    throw ConfigError("unknown loss '" + name + "'");
}

TrainingConfig TrainingConfig::full_scale_defaults() {
    TrainingConfig c;
    c.samples_per_epoch = 1000000;
    c.validation_samples = 1000000;
    c.epochs = 200;
    return c;
}

TrainingConfig TrainingConfig::desk_defaults() {
    TrainingConfig c;
    c.learning_rate = 3e-3;
    return c;
}

void TrainingConfig::validate() const {
    if (samples_per_epoch == 0) throw ConfigError("samples_per_epoch must be >= 1");
    if (batch_size == 0 || batch_size > samples_per_epoch) {
        throw ConfigError("batch_size must lie in [1, samples_per_epoch]");
    }
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (!(learning_rate > 0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning rate must be positive");
    }
    if (!(scheduler_factor > 0 && scheduler_factor < 1)) {
        throw ConfigError("scheduler factor must lie in (0, 1)");
    }
    if (scheduler_patience < 1) throw ConfigError("scheduler patience must be >= 1");
    if (validation_samples == 0) throw ConfigError("validation_samples must be >= 1");
    if (measure.ksg_k < 1) throw ConfigError("ksg k must be >= 1");
    if (max_resample < 0) throw ConfigError("max_resample must be >= 0");
    if (var_mu.empty() || var_nu.empty()) throw ConfigError("variable names must be non-empty");
}

nlohmann::json to_json(const TrainingConfig& c) {
    return {
        {"samples_per_epoch", c.samples_per_epoch},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"lr", c.learning_rate},
        {"scheduler", {{"factor", c.scheduler_factor}, {"patience", c.scheduler_patience}}},
        {"loss", to_string(c.loss)},
        {"seed", c.seed},
        {"validation_samples", c.validation_samples},
        {"validation_on_grid", c.validation_on_grid},
        {"measure", {{"kind", to_string(c.measure.kind)}, {"k", c.measure.ksg_k}}},
        {"var_mu", c.var_mu},
        {"var_nu", c.var_nu},
        {"max_resample", c.max_resample},
        {"threads", c.threads},
    };
}

TrainingConfig training_config_from_json(const nlohmann::json& j, TrainingConfig c) {
    try {
        c.samples_per_epoch = j.value("samples_per_epoch", c.samples_per_epoch);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("lr", c.learning_rate);
        if (j.contains("scheduler")) {
            c.scheduler_factor = j.at("scheduler").value("factor", c.scheduler_factor);
            c.scheduler_patience = j.at("scheduler").value("patience", c.scheduler_patience);
        }
        c.loss = loss_kind_from_string(j.value("loss", to_string(c.loss)));
        c.seed = j.value("seed", c.seed);
        c.validation_samples = j.value("validation_samples", c.validation_samples);
        c.validation_on_grid = j.value("validation_on_grid", c.validation_on_grid);
        if (j.contains("measure")) {
            const auto& m = j.at("measure");
            c.measure.kind = measure_kind_from_string(m.value("kind", to_string(c.measure.kind)));
            c.measure.ksg_k = m.value("k", c.measure.ksg_k);
        }
        c.var_mu = j.value("var_mu", c.var_mu);
        c.var_nu = j.value("var_nu", c.var_nu);
        c.max_resample = j.value("max_resample", c.max_resample);
        c.threads = j.value("threads", c.threads);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("training config: ") + e.what());
    }
    c.validate();
    return c;
}

double pair_target(const EnsembleField& field, const CorrelationMeasure& measure,
                   std::size_t var_mu, std::size_t var_nu, const Vec3& p_mu, const Vec3& p_nu) {
    const SampleVector a = sample_at(field, var_mu, p_mu);
    const SampleVector b = sample_at(field, var_nu, p_nu);
    return measure(a, b);
}

PairSet make_pair_set(const EnsembleField& field, const TrainingConfig& config,
                      std::uint64_t stream, std::size_t count, bool on_grid) {
    const std::size_t var_mu = field.variable_index(config.var_mu);
    const std::size_t var_nu = field.variable_index(config.var_nu);
    std::seed_seq seq{static_cast<std::uint32_t>(config.seed),
                      static_cast<std::uint32_t>(config.seed >> 32),
                      static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 rng(seq);
    std::uniform_real_distribution<double> uniform(-1.0, 1.0);
    const GridDomain& dom = field.domain();
    auto draw = [&]() -> Vec3 {
        if (!on_grid) {
            const double x = uniform(rng);
            const double y = uniform(rng);
            const double z = uniform(rng);
            return {x, y, z};
        }
        const auto ix = std::uniform_int_distribution<std::uint32_t>(0, dom.nx - 1)(rng);
        const auto iy = std::uniform_int_distribution<std::uint32_t>(0, dom.ny - 1)(rng);
        const auto iz = std::uniform_int_distribution<std::uint32_t>(0, dom.nz - 1)(rng);
        return dom.coordinate(ix, iy, iz);
    };

    PairSet set;
    set.p_mu.resize(count);
    set.p_nu.resize(count);
    set.target.assign(count, 0.0);
    for (std::size_t i = 0; i < count; ++i) {
        set.p_mu[i] = draw();
        set.p_nu[i] = draw();
    }

    std::vector<std::uint8_t> degenerate(count, 0);
    std::vector<std::size_t> pending(count);
    for (std::size_t i = 0; i < count; ++i) pending[i] = i;
    for (int attempt = 0;; ++attempt) {
        parallel_for(
            0, pending.size(),
            [&](std::size_t k) {
                const std::size_t i = pending[k];
                try {
                    set.target[i] = pair_target(field, config.measure, var_mu, var_nu,
                                                set.p_mu[i], set.p_nu[i]);
                    degenerate[i] = 0;
                } catch (const DegenerateInputError&) {
                    set.target[i] = 0.0;
                    degenerate[i] = 1;
                }
            },
            config.threads);
        std::vector<std::size_t> still;
        for (std::size_t i : pending) {
            if (degenerate[i]) still.push_back(i);
        }
        if (still.empty()) break;
        if (attempt >= config.max_resample) {
            spdlog::warn("{} pairs kept a degenerate target after {} redraws; using 0",
                         still.size(), config.max_resample);
            break;
        }
        // Redraw in index order so the outcome is independent of scheduling.
        for (std::size_t i : still) {
            set.p_mu[i] = draw();
            set.p_nu[i] = draw();
        }
        set.resampled += still.size();
        pending = std::move(still);
    }
    if (set.resampled > 0) spdlog::debug("resampled {} degenerate pairs", set.resampled);
    return set;
}

PairSet make_training_batch(const EnsembleField& field, const TrainingConfig& config, int epoch) {
    return make_pair_set(field, config, static_cast<std::uint64_t>(epoch),
                         config.samples_per_epoch);
}

PairSet make_validation_set(const EnsembleField& field, const TrainingConfig& config) {
    return make_pair_set(field, config, kValidationStream, config.validation_samples,
                         config.validation_on_grid);
}

double psnr(std::span<const double> predicted, std::span<const double> truth,
            std::optional<double> peak) {
    if (truth.empty()) throw ParameterError("psnr of an empty set");
    if (predicted.size() != truth.size()) throw ParameterError("psnr inputs differ in length");
    double p = 0;
    if (peak) {
        if (!(*peak > 0)) throw ParameterError("psnr peak must be positive");
        p = *peak;
    } else {
        const auto [lo, hi] = std::minmax_element(truth.begin(), truth.end());
        p = std::max(*hi - *lo, 1e-6);
    }
    double sq = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        const double d = predicted[i] - truth[i];
        sq += d * d;
    }
    const double mse = sq / static_cast<double>(truth.size());
    if (mse == 0) return 200.0;
    return std::min(200.0, 10.0 * std::log10(p * p / mse));
}

Evaluation evaluate(const NdfModel<float>& model, const PairSet& pairs) {
    const std::size_t n = pairs.size();
    if (n == 0) throw ParameterError("evaluate on an empty pair set");
    std::vector<double> predicted(n);
    constexpr std::size_t chunk = 8192;
    std::vector<float> out;
    for (std::size_t start = 0; start < n; start += chunk) {
        const std::size_t len = std::min(chunk, n - start);
        out.resize(len);
        model.forward(std::span<const Vec3>(pairs.p_mu).subspan(start, len),
                      std::span<const Vec3>(pairs.p_nu).subspan(start, len), out);
        for (std::size_t i = 0; i < len; ++i) predicted[start + i] = out[i];
    }
    Evaluation e;
    double abs_sum = 0, sq_sum = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = predicted[i] - pairs.target[i];
        abs_sum += std::abs(d);
        sq_sum += d * d;
    }
    e.l1 = abs_sum / static_cast<double>(n);
    e.mse = sq_sum / static_cast<double>(n);
    e.psnr_db = psnr(predicted, pairs.target);
    return e;
}

TrainedArtifact train(const EnsembleField& field, ArchitectureDescriptor architecture,
                      const TrainingConfig& config, const EpochCallback& on_epoch) {
    config.validate();
    field.variable_index(config.var_mu);
    field.variable_index(config.var_nu);
    architecture.var_mu = config.var_mu;
    architecture.var_nu = config.var_nu;
    architecture.measure = config.measure;
    architecture.validate();

    const auto start = std::chrono::steady_clock::now();
    NdfModel<float> model(architecture);
    model.initialize(config.seed);

    auto params = model.parameter_blocks();
    std::vector<std::size_t> sizes;
    for (auto block : params) sizes.push_back(block.size());
    AdamConfig adam_config;
    adam_config.learning_rate = config.learning_rate;
    Adam<float> adam(sizes, adam_config);
    PlateauScheduler scheduler(config.scheduler_factor, config.scheduler_patience);

    const PairSet validation = make_validation_set(field, config);
    TrainedArtifact artifact{model, {}, config, 0, 0.0};
    double best_loss = std::numeric_limits<double>::infinity();

    NdfTape<float> tape;
    NdfGradient<float> grad = model.zero_gradient();
    auto grads = gradient_blocks(grad);
    std::vector<float> dy;

    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();
        const PairSet batch = make_training_batch(field, config, epoch);
        double loss_sum = 0;
        std::size_t batch_index = 0;
        for (std::size_t lo = 0; lo < batch.size(); lo += config.batch_size, ++batch_index) {
            const std::size_t len = std::min(config.batch_size, batch.size() - lo);
            model.forward(std::span<const Vec3>(batch.p_mu).subspan(lo, len),
                          std::span<const Vec3>(batch.p_nu).subspan(lo, len), tape);
            dy.resize(len);
            double batch_loss = 0;
            const float inv = 1.0f / static_cast<float>(len);
            for (std::size_t i = 0; i < len; ++i) {
                const double diff = static_cast<double>(tape.output(0, i)) - batch.target[lo + i];
                if (config.loss == LossKind::L1) {
                    batch_loss += std::abs(diff);
                    dy[i] = diff > 0 ? inv : (diff < 0 ? -inv : 0.0f);
                } else {
                    batch_loss += diff * diff;
                    dy[i] = static_cast<float>(2.0 * diff) * inv;
                }
            }
            if (!std::isfinite(batch_loss)) {
                throw TrainingError("non-finite loss at epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) + ", lr " +
                                    std::to_string(adam.learning_rate()));
            }
            loss_sum += batch_loss;
            grad.zero();
            model.backward(tape, dy, grad);
            try {
                adam.step(params, grads);
            } catch (const TrainingError& e) {
                throw TrainingError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                                    ", batch " + std::to_string(batch_index) + ", lr " +
                                    std::to_string(adam.learning_rate()) + ")");
            }
        }

        model.check_finite();
        const Evaluation eval = evaluate(model, validation);
        EpochRecord record;
        record.epoch = epoch;
        record.train_loss = loss_sum / static_cast<double>(batch.size());
        record.validation_loss = eval.loss(config.loss);
        record.validation_psnr = eval.psnr_db;
        record.learning_rate = adam.learning_rate();
        record.seconds = seconds_since(epoch_start);
        artifact.history.push_back(record);

        if (record.validation_loss < best_loss) {
            best_loss = record.validation_loss;
            artifact.model = model;
            artifact.best_epoch = epoch;
        }
        adam.set_learning_rate(scheduler.step(record.validation_loss, adam.learning_rate()));
        spdlog::debug("epoch {} train {:.6g} val {:.6g} psnr {:.2f} dB lr {:.2g} ({:.1f} s)", epoch,
                      record.train_loss, record.validation_loss, record.validation_psnr,
                      record.learning_rate, record.seconds);
        if (on_epoch) on_epoch(record);
    }
    artifact.seconds = seconds_since(start);
    return artifact;
}

std::vector<SweepCell> sweep(const EnsembleField& field, const ArchitectureDescriptor& base,
                             const TrainingConfig& config, const std::vector<int>& table_bits,
                             const std::vector<std::pair<int, int>>& mlp_shapes) {
    std::vector<SweepCell> cells;
    for (int bits : table_bits) {
        for (const auto& [layers, channels] : mlp_shapes) {
            SweepCell cell;
            cell.log2_table_size = bits;
            cell.layers = layers;
            cell.channels = channels;
            ArchitectureDescriptor d = base;
            d.grid.log2_table_size = bits;
            if (d.encoder_layers > 0) d.encoder_layers = layers;
            d.decoder_layers = layers;
            d.hidden_channels = channels;
            cell.model_bytes = d.model_bytes();
            try {
                const auto artifact = train(field, d, config);
                cell.psnr_db = artifact.best().validation_psnr;
                cell.train_seconds = artifact.seconds;
            } catch (const Error& e) {
                cell.error = e.what();
                cell.psnr_db = std::numeric_limits<double>::quiet_NaN();
                spdlog::error("sweep cell T={} l={} c={} failed: {}", bits, layers, channels,
                              e.what());
            }
            spdlog::info("sweep T={} l={} c={}: {:.2f} dB, {} bytes", bits, layers, channels,
                         cell.psnr_db, cell.model_bytes);
            cells.push_back(std::move(cell));
        }
    }
    return cells;
}

void write_sweep_csv(const std::vector<SweepCell>& cells, std::ostream& out) {
    out << "T,layers,channels,psnr_db,model_bytes,train_seconds\n";
    for (const auto& c : cells) {
        out << c.log2_table_size << ',' << c.layers << ',' << c.channels << ',';
        if (c.error.empty()) {
            out << c.psnr_db;
        } else {
            out << "nan";
        }
        out << ',' << c.model_bytes << ',' << c.train_seconds << '\n';
    }
}

} // namespace ndf
