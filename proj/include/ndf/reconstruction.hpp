#pragma once

// Dense field reconstruction from trained models: single-reference fields,
// two-reference differences, correlation-matrix cells, comparison with the
// estimator ground truth, timing, and a thread-safe model registry.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <shared_mutex>
#include <string>
#include <vector>

#include "ndf/correlation.hpp"
#include "ndf/ensemble.hpp"
#include "ndf/model.hpp"

namespace ndf {

/// Which argument of the model the reference point fills.
/// Nu: phi(p) = model(p, ref). Mu: phi(p) = model(ref, p).
enum class ReferenceRole { Mu, Nu };

std::string to_string(ReferenceRole role);
ReferenceRole reference_role_from_string(const std::string& name);

constexpr std::size_t kDefaultQueryBatch = 65536;

struct ReconstructRequest {
    Vec3 reference{0.0, 0.0, 0.0};
    ReferenceRole role = ReferenceRole::Nu;
    GridDims dims;
    std::size_t batch_size = kDefaultQueryBatch;

    /// Throws ParameterError for a non-finite reference, empty dims or M = 0.
    void validate() const;
};

/// Encodes the reference once and evaluates grid nodes in batches of M.
/// Equal bit-for-bit to calling model.forward node by node.
FieldGrid reconstruct_field(const NdfModel<float>& model, const ReconstructRequest& request,
                            unsigned threads = 0);

/// reconstruct(ref_a) - reconstruct(ref_b), elementwise.
FieldGrid difference_field(const NdfModel<float>& model, const Vec3& ref_a, const Vec3& ref_b,
                           const GridDims& dims, ReferenceRole role = ReferenceRole::Nu,
                           std::size_t batch_size = kDefaultQueryBatch, unsigned threads = 0);

/// Cell (i, j), row-major over `variables`, holds phi(p) = R_{v_i v_j}(p, ref).
/// Cells with i <= j use the (v_i, v_j) model with the reference as nu; the
/// others reuse the (v_j, v_i) model with the reference as mu. Models are
/// matched by their variable names in either order. Throws NotFoundError
/// naming the first absent pair.
std::vector<FieldGrid> matrix_reconstruct(const std::vector<const NdfModel<float>*>& models,
                                          const std::vector<std::string>& variables,
                                          const Vec3& ref, const GridDims& dims,
                                          std::size_t batch_size = kDefaultQueryBatch,
                                          unsigned threads = 0);

struct Comparison {
    double psnr_db = 0;
    double max_abs_err = 0;
    FieldGrid errors;  // reconstruction - truth
    FieldGrid truth;
    FieldGrid reconstruction;
};

/// Ground truth from the estimator and the model reconstruction on identical
/// grids. Throws ConfigError when the model's variables are not in `field`.
Comparison compare_to_ground_truth(const NdfModel<float>& model, const EnsembleField& field,
                                   const CorrelationMeasure& measure,
                                   const ReconstructRequest& request, unsigned threads = 0);

/// PSNR and max error of a reconstruction against a truth field.
Comparison compare_fields(const FieldGrid& reconstruction, const FieldGrid& truth);

struct TimingRow {
    std::string method;
    std::vector<double> seconds;
    double median() const;
    bool robust() const { return seconds.size() > 1; }
};

struct BenchmarkOptions {
    GridDims dims{32, 32, 32};
    Vec3 reference{0.0, 0.0, 0.0};
    int repetitions = 3;
    int ksg_k = 3;
    bool include_pearson = true;
    bool include_ksg = true;
    unsigned threads = 0;
};

/// Median wall-clock of NDF reconstruction and direct Pearson / KSG-MI ground
/// truth on the same grid.
std::vector<TimingRow> benchmark(const NdfModel<float>& model, const EnsembleField& field,
                                 const BenchmarkOptions& options);

/// Header: method,repetitions,median_seconds,min_seconds,max_seconds,robust
void write_benchmark_csv(const std::vector<TimingRow>& rows, std::ostream& out);

/// Named models shared by concurrent readers. Insertion happens only after a
/// model is fully loaded, so readers never observe a partial model.
class ModelRegistry {
public:
    using Handle = std::shared_ptr<const NdfModel<float>>;

    /// Registers `model` under `id` (generated when empty); returns the id.
    std::string add(NdfModel<float> model, std::string id = {});
    std::string load(const std::filesystem::path& path, std::string id = {});
    /// Throws NotFoundError for unknown ids.
    Handle get(const std::string& id) const;
    bool remove(const std::string& id);
    std::vector<std::pair<std::string, Handle>> list() const;
    std::size_t size() const;

private:
    mutable std::shared_mutex mutex_;
    std::map<std::string, Handle> models_;
    std::uint64_t next_id_ = 0;
};

} // namespace ndf
