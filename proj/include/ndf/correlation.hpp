#pragma once

// Dependence measures between paired sample vectors and dense ground-truth
// dependence fields for a reference point.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ndf/ensemble.hpp"

namespace ndf {

/// Pearson's r in 64-bit, clamped to [-1, 1].
/// Throws ShapeError for mismatched/short inputs and DegenerateInputError when
/// either vector has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

/// Digamma function psi(x) for x > 0 (recurrence up to x >= 6, then the
/// asymptotic series).
double digamma(double x);

/// Kraskov-Stoegbauer-Grassberger mutual information estimate (first
/// variant), in nats. Max-norm in joint space, strict marginal counts, kd-tree
/// neighbor search. A per-index jitter of 1e-10 * value range keeps tied
/// samples distinct. Not clamped: small negative values are estimator noise.
double ksg_mi(std::span<const double> a, std::span<const double> b, int k = 3);

/// -1/2 ln(1 - rho^2): mutual information of a bivariate Gaussian.
double gaussian_mi_analytic(double rho);

struct CorrelationMeasure {
    enum class Kind { Pearson, KsgMi };

    Kind kind = Kind::Pearson;
    int ksg_k = 3;

    /// Applies the measure; degenerate inputs propagate as DegenerateInputError.
    double operator()(std::span<const double> a, std::span<const double> b) const;
    bool operator==(const CorrelationMeasure&) const = default;
};

std::string to_string(CorrelationMeasure::Kind kind);
CorrelationMeasure::Kind measure_kind_from_string(const std::string& name);

struct GridDims {
    std::uint32_t x = 1;
    std::uint32_t y = 1;
    std::uint32_t z = 1;

    std::size_t count() const { return std::size_t{x} * y * z; }
    void validate() const;
    /// Node (i, j, k) mapped into [-1,1]^3.
    Vec3 coordinate(std::uint32_t i, std::uint32_t j, std::uint32_t k) const {
        return {node_coordinate(i, x), node_coordinate(j, y), node_coordinate(k, z)};
    }
    Vec3 coordinate(std::size_t flat) const {
        const auto i = static_cast<std::uint32_t>(flat % x);
        const auto j = static_cast<std::uint32_t>((flat / x) % y);
        const auto k = static_cast<std::uint32_t>(flat / (std::size_t{x} * y));
        return coordinate(i, j, k);
    }
    bool operator==(const GridDims&) const = default;
};

/// Dense scalar volume, x fastest.
struct FieldGrid {
    GridDims dims;
    std::vector<float> values;

    FieldGrid() = default;
    explicit FieldGrid(GridDims d) : dims(d), values(d.count(), 0.0f) {}
};

FieldGrid read_field_grid(std::istream& in);
void write_field_grid(const FieldGrid& grid, std::ostream& out);
FieldGrid load_field_grid(const std::filesystem::path& path);
void save_field_grid(const FieldGrid& grid, const std::filesystem::path& path);

/// Entry (x,y,z) = measure(e^mu(ref), e^nu(q_xyz)). Parallel over grid points;
/// the result does not depend on `threads`. Degenerate Pearson points map to 0
/// (one summary warning is logged).
FieldGrid ground_truth_field(const EnsembleField& field, const CorrelationMeasure& measure,
                             std::size_t var_mu, std::size_t var_nu, const Vec3& ref,
                             const GridDims& dims, unsigned threads = 0);

} // namespace ndf
