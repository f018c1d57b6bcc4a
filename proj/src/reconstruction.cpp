#include "ndf/reconstruction.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <mutex>
#include <ostream>

#include "ndf/error.hpp"
#include "ndf/parallel.hpp"
#include "ndf/training.hpp"

namespace ndf {

std::string to_string(ReferenceRole role) { return role == ReferenceRole::Mu ? "mu" : "nu"; }

ReferenceRole reference_role_from_string(const std::string& name) {
    if (name == "mu") return ReferenceRole::Mu;
    if (name == "nu") return ReferenceRole::Nu;
    throw ParameterError("unknown reference role '" + name + "' (expected mu or nu)");
}

void ReconstructRequest::validate() const {
    for (double v : reference) {
        if (!std::isfinite(v)) throw ParameterError("reference point must be finite");
    }
    if (dims.x == 0 || dims.y == 0 || dims.z == 0) throw ParameterError("grid dims must be >= 1");
    if (batch_size == 0) throw ParameterError("query batch size must be >= 1");
}

FieldGrid reconstruct_field(const NdfModel<float>& model, const ReconstructRequest& request,
                            unsigned threads) {
    request.validate();
    model.check_finite();
    const Role ref_role = request.role == ReferenceRole::Mu ? Role::Mu : Role::Nu;
    const Role query_role = request.role == ReferenceRole::Mu ? Role::Nu : Role::Mu;

    FeatureMatrix<float> ref_features;
    model.encode(ref_role, std::span<const Vec3>(&request.reference, 1), ref_features);

    FieldGrid out(request.dims);
    const std::size_t total = request.dims.count();
    const std::size_t M = request.batch_size;
    const std::size_t batches = (total + M - 1) / M;
    parallel_for(
        0, batches,
        [&](std::size_t b) {
            const std::size_t lo = b * M;
            const std::size_t len = std::min(M, total - lo);
            std::vector<Vec3> queries(len);
            for (std::size_t i = 0; i < len; ++i) queries[i] = request.dims.coordinate(lo + i);
            FeatureMatrix<float> features;
            model.encode(query_role, queries, features);
            const std::span<float> dst(out.values.data() + lo, len);
            if (ref_role == Role::Nu) {
                model.decode(features, ref_features, dst);
            } else {
                model.decode(ref_features, features, dst);
            }
        },
        threads);
    return out;
}

FieldGrid difference_field(const NdfModel<float>& model, const Vec3& ref_a, const Vec3& ref_b,
                           const GridDims& dims, ReferenceRole role, std::size_t batch_size,
                           unsigned threads) {
    FieldGrid a = reconstruct_field(model, {ref_a, role, dims, batch_size}, threads);
    const FieldGrid b = reconstruct_field(model, {ref_b, role, dims, batch_size}, threads);
    for (std::size_t i = 0; i < a.values.size(); ++i) a.values[i] -= b.values[i];
    return a;
}

std::vector<FieldGrid> matrix_reconstruct(const std::vector<const NdfModel<float>*>& models,
                                          const std::vector<std::string>& variables,
                                          const Vec3& ref, const GridDims& dims,
                                          std::size_t batch_size, unsigned threads) {
    if (variables.empty()) throw ParameterError("matrix reconstruction needs variables");
    // (model, swapped): swapped models were trained as (v_j, v_i).
    auto find = [&](const std::string& a, const std::string& b)
        -> std::pair<const NdfModel<float>*, bool> {
        for (const auto* m : models) {
            if (m && m->descriptor().var_mu == a && m->descriptor().var_nu == b) return {m, false};
        }
        for (const auto* m : models) {
            if (m && m->descriptor().var_mu == b && m->descriptor().var_nu == a) return {m, true};
        }
        throw NotFoundError("no model for variable pair (" + a + ", " + b + ")");
    };

    const std::size_t d = variables.size();
    // Resolve every pair first so a missing model fails before any work.
    std::vector<std::pair<const NdfModel<float>*, bool>> upper(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = i; j < d; ++j) upper[i * d + j] = find(variables[i], variables[j]);
    }

    std::vector<FieldGrid> cells;
    cells.reserve(d * d);
    for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
            const bool lower = i > j;
            const auto [model, swapped] = lower ? upper[j * d + i] : upper[i * d + j];
            // Upper cell: R_ij(p, ref) = Phi_ij(p, ref). Lower cell: R_ij(p, ref) =
            // Phi_ji(ref, p). A model stored as (v_j, v_i) flips the role again.
            const bool ref_is_mu = lower != swapped;
            cells.push_back(reconstruct_field(
                *model, {ref, ref_is_mu ? ReferenceRole::Mu : ReferenceRole::Nu, dims, batch_size},
                threads));
        }
    }
    return cells;
}

Comparison compare_fields(const FieldGrid& reconstruction, const FieldGrid& truth) {
    if (!(reconstruction.dims == truth.dims)) throw ConfigError("compared grids differ in shape");
    Comparison c;
    c.errors = FieldGrid(truth.dims);
    std::vector<double> pred(truth.values.size()), ref(truth.values.size());
    for (std::size_t i = 0; i < truth.values.size(); ++i) {
        pred[i] = reconstruction.values[i];
        ref[i] = truth.values[i];
        const double e = pred[i] - ref[i];
        c.errors.values[i] = static_cast<float>(e);
        c.max_abs_err = std::max(c.max_abs_err, std::abs(e));
    }
    c.psnr_db = psnr(pred, ref);
    c.truth = truth;
    c.reconstruction = reconstruction;
    return c;
}

Comparison compare_to_ground_truth(const NdfModel<float>& model, const EnsembleField& field,
                                   const CorrelationMeasure& measure,
                                   const ReconstructRequest& request, unsigned threads) {
    request.validate();
    std::size_t var_mu = 0, var_nu = 0;
    try {
        var_mu = field.variable_index(model.descriptor().var_mu);
        var_nu = field.variable_index(model.descriptor().var_nu);
    } catch (const LookupError& e) {
        throw ConfigError(std::string("model does not match the ensemble: ") + e.what());
    }
    // ground_truth_field puts the reference in the first argument; the
    // measures are symmetric, so a nu-role reference swaps the variables.
    const FieldGrid truth =
        request.role == ReferenceRole::Mu
            ? ground_truth_field(field, measure, var_mu, var_nu, request.reference, request.dims,
                                 threads)
            : ground_truth_field(field, measure, var_nu, var_mu, request.reference, request.dims,
                                 threads);
    return compare_fields(reconstruct_field(model, request, threads), truth);
}

double TimingRow::median() const {
    if (seconds.empty()) return 0.0;
    auto s = seconds;
    std::sort(s.begin(), s.end());
    const std::size_t n = s.size();
    return n % 2 ? s[n / 2] : 0.5 * (s[n / 2 - 1] + s[n / 2]);
}

std::vector<TimingRow> benchmark(const NdfModel<float>& model, const EnsembleField& field,
                                 const BenchmarkOptions& options) {
    if (options.repetitions < 1) throw ParameterError("benchmark needs >= 1 repetition");
    const auto var_mu = field.variable_index(model.descriptor().var_mu);
    const auto var_nu = field.variable_index(model.descriptor().var_nu);
    auto time = [&](const std::string& name, auto&& fn) {
        TimingRow row{name, {}};
        for (int r = 0; r < options.repetitions; ++r) {
            const auto t0 = std::chrono::steady_clock::now();
            fn();
            row.seconds.push_back(
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        }
        return row;
    };
    std::vector<TimingRow> rows;
    rows.push_back(time("ndf", [&] {
        reconstruct_field(model, {options.reference, ReferenceRole::Nu, options.dims},
                          options.threads);
    }));
    if (options.include_pearson) {
        rows.push_back(time("pearson", [&] {
            ground_truth_field(field, CorrelationMeasure{}, var_mu, var_nu, options.reference,
                               options.dims, options.threads);
        }));
    }
    if (options.include_ksg) {
        const CorrelationMeasure mi{CorrelationMeasure::Kind::KsgMi, options.ksg_k};
        rows.push_back(time("ksg_mi", [&] {
            ground_truth_field(field, mi, var_mu, var_nu, options.reference, options.dims,
                               options.threads);
        }));
    }
    return rows;
}

void write_benchmark_csv(const std::vector<TimingRow>& rows, std::ostream& out) {
    out << "method,repetitions,median_seconds,min_seconds,max_seconds,robust\n";
    for (const auto& r : rows) {
        const auto [lo, hi] = std::minmax_element(r.seconds.begin(), r.seconds.end());
        out << r.method << ',' << r.seconds.size() << ',' << r.median() << ','
            << (r.seconds.empty() ? 0.0 : *lo) << ',' << (r.seconds.empty() ? 0.0 : *hi) << ','
            << (r.robust() ? "yes" : "no") << '\n';
    }
}

std::string ModelRegistry::add(NdfModel<float> model, std::string id) {
    model.check_finite();
    auto handle = std::make_shared<const NdfModel<float>>(std::move(model));
    std::unique_lock lock(mutex_);
    if (id.empty()) {
        do {
            id = "m" + std::to_string(next_id_++);
        } while (models_.count(id));
    }
    models_[id] = std::move(handle);
    return id;
}

std::string ModelRegistry::load(const std::filesystem::path& path, std::string id) {
    NdfModel<float> model = load_model(path);  // outside the lock
    return add(std::move(model), std::move(id));
}

ModelRegistry::Handle ModelRegistry::get(const std::string& id) const {
    std::shared_lock lock(mutex_);
    const auto it = models_.find(id);
    if (it == models_.end()) throw NotFoundError("unknown model id '" + id + "'");
    return it->second;
}

bool ModelRegistry::remove(const std::string& id) {
    std::unique_lock lock(mutex_);
    return models_.erase(id) > 0;
}

std::vector<std::pair<std::string, ModelRegistry::Handle>> ModelRegistry::list() const {
    std::shared_lock lock(mutex_);
    return {models_.begin(), models_.end()};
}

std::size_t ModelRegistry::size() const {
    std::shared_lock lock(mutex_);
    return models_.size();
}

} // namespace ndf
