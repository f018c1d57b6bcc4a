#pragma once

// Position embeddings over [-1,1]^3: fixed Fourier features and a trainable
// multiresolution hash grid.

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "ndf/ensemble.hpp"
#include "ndf/feature_matrix.hpp"

namespace ndf {

struct FourierConfig {
    int octaves = 4;

    std::size_t output_dim() const { return 6 * static_cast<std::size_t>(octaves); }
    void validate() const;
    bool operator==(const FourierConfig&) const = default;
};

/// (sin, cos) of 2^i * pi * p_axis, ordered octave-major, then axis, sin first.
void fourier_encode(const Vec3& p, const FourierConfig& config, std::span<double> out);
std::vector<double> fourier_encode(const Vec3& p, const FourierConfig& config);

struct HashGridConfig {
    int levels = 6;
    int base_resolution = 16;
    double growth = 2.0;
    int log2_table_size = 16;
    int features_per_level = 2;

    void validate() const;
    std::size_t output_dim() const {
        return static_cast<std::size_t>(levels) * static_cast<std::size_t>(features_per_level);
    }
    std::size_t table_size() const { return std::size_t{1} << log2_table_size; }
    std::size_t parameter_count() const {
        return static_cast<std::size_t>(levels) * table_size() *
               static_cast<std::size_t>(features_per_level);
    }
    /// Vertices per axis of the virtual grid on `level` (coarse to fine).
    std::uint32_t resolution(int level) const;
    bool operator==(const HashGridConfig&) const = default;
};

/// Table slot of an integer vertex on a level with `resolution` vertices per
/// axis. Levels whose dense grid fits in the table index it directly (no
/// collisions); finer levels use the XOR-of-primes spatial hash.
std::uint32_t hash_slot(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz,
                        std::uint32_t resolution, int log2_table_size);

/// The 8 table slots and trilinear weights a position touches on one level.
struct CornerFootprint {
    std::uint32_t slot[8];
    double weight[8];
};

CornerFootprint level_footprint(const Vec3& p, const HashGridConfig& config, int level);

template <typename S>
class HashGrid {
public:
    HashGrid() = default;
    explicit HashGrid(const HashGridConfig& config);

    const HashGridConfig& config() const { return config_; }

    /// Table entries, level-major, then slot, then feature.
    std::span<S> tables() { return tables_; }
    std::span<const S> tables() const { return tables_; }

    /// Uniform init in [-scale, scale].
    void initialize(std::mt19937_64& rng, double scale = 1e-4);

    /// Concatenated per-level interpolated features (coarse to fine).
    std::vector<S> encode(const Vec3& p) const;

    /// Writes output_dim() rows starting at `row_offset` of `out`.
    void encode(std::span<const Vec3> positions, FeatureMatrix<S>& out,
                std::size_t row_offset) const;

    /// Adds upstream * weight to the touched slots of `grad` (same layout as
    /// tables()). Samples are accumulated in order.
    void backward(const Vec3& p, std::span<const S> upstream, std::span<S> grad) const;
    void backward(std::span<const Vec3> positions, const FeatureMatrix<S>& upstream,
                  std::size_t row_offset, std::span<S> grad) const;

private:
    HashGridConfig config_;
    std::vector<S> tables_;
};

extern template class HashGrid<float>;
extern template class HashGrid<double>;

} // namespace ndf
