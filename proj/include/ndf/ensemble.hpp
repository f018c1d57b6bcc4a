#pragma once

// Multi-variable ensemble fields on regular 3D grids over the normalized
// domain [-1,1]^3, their NDFE file codec and a synthetic generator.

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ndf {

using Vec3 = std::array<double, 3>;

/// Clamps every component of p into [-1, 1].
Vec3 clamp_to_domain(const Vec3& p);

/// Continuous coordinate of node `index` on an axis with `count` nodes.
/// A single-node axis maps to the domain center.
inline double node_coordinate(std::uint32_t index, std::uint32_t count) {
    if (count <= 1) return 0.0;
    return 2.0 * static_cast<double>(index) / static_cast<double>(count - 1) - 1.0;
}

struct GridDomain {
    std::uint32_t nx = 2;
    std::uint32_t ny = 2;
    std::uint32_t nz = 2;

    /// Throws ParameterError unless every axis has at least two nodes.
    void validate() const;
    std::size_t node_count() const { return std::size_t{nx} * ny * nz; }
    std::size_t index(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return (std::size_t{z} * ny + y) * nx + x;
    }
    Vec3 coordinate(std::uint32_t x, std::uint32_t y, std::uint32_t z) const {
        return {node_coordinate(x, nx), node_coordinate(y, ny), node_coordinate(z, nz)};
    }
    bool operator==(const GridDomain&) const = default;
};

/// Per-member values of one variable at one position.
using SampleVector = std::vector<double>;

/// N members x d variables of float32 values on a shared grid. Immutable
/// after construction.
class EnsembleField {
public:
    /// `values` is ordered variable-major, then member, then z, y, x.
    /// Throws ParameterError/DataError if an invariant does not hold.
    EnsembleField(GridDomain domain, std::uint32_t member_count,
                  std::vector<std::string> variables, std::vector<float> values);

    const GridDomain& domain() const { return domain_; }
    std::uint32_t member_count() const { return members_; }
    std::size_t variable_count() const { return variables_.size(); }
    const std::vector<std::string>& variables() const { return variables_; }

    /// Index of a named variable; throws LookupError when absent.
    std::size_t variable_index(const std::string& name) const;

    std::span<const float> values() const { return values_; }
    std::span<const float> member_grid(std::size_t variable, std::uint32_t member) const;

private:
    GridDomain domain_;
    std::uint32_t members_;
    std::vector<std::string> variables_;
    std::vector<float> values_;
};

/// Trilinear interpolation of every member's grid at p (clamped to the domain).
/// Node coordinates return stored values exactly.
SampleVector sample_at(const EnsembleField& field, std::size_t variable, const Vec3& p);
SampleVector sample_at(const EnsembleField& field, const std::string& variable, const Vec3& p);

/// Allocation-free variant; `out` must hold member_count() entries.
void sample_into(const EnsembleField& field, std::size_t variable, const Vec3& p,
                 std::span<double> out);

EnsembleField load_ensemble(const std::filesystem::path& path);
EnsembleField read_ensemble(std::istream& in);
void save_ensemble(const EnsembleField& field, const std::filesystem::path& path);
void write_ensemble(const EnsembleField& field, std::ostream& out);

struct CovarianceKernel {
    enum class Kind { SquaredExponential, WhiteNoise, LinearMix };

    Kind kind = Kind::SquaredExponential;
    /// Length scale in normalized domain units (squared-exponential and linear mix).
    double length_scale = 0.5;
    /// Correlation between the two variables of a linear-mix ensemble at
    /// coinciding positions.
    double mix = 0.8;
};

std::string to_string(CovarianceKernel::Kind kind);
CovarianceKernel::Kind kernel_kind_from_string(const std::string& name);

/// Draws `member_count` independent zero-mean, unit-variance Gaussian random
/// fields per variable. Squared-exponential covariance factorizes per axis on
/// a regular grid, so each member is produced by applying the per-axis
/// spectral square roots to white noise. Deterministic given the seed.
///
/// LinearMix requires exactly two variables: v0 = z0 and
/// v1 = mix * z0 + sqrt(1 - mix^2) * z1 for independent latent fields z0, z1.
EnsembleField generate_synthetic(const GridDomain& domain, std::uint32_t member_count,
                                 const std::vector<std::string>& variables,
                                 const CovarianceKernel& kernel, std::uint64_t seed);

} // namespace ndf
