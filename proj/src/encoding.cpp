#include "ndf/encoding.hpp"

#include <cmath>
#include <numbers>

#include "grid_cell.hpp"
#include "ndf/error.hpp"

namespace ndf {

void FourierConfig::validate() const {
    if (octaves < 0 || octaves > 30) throw ConfigError("fourier octaves must lie in [0, 30]");
}

void fourier_encode(const Vec3& p, const FourierConfig& config, std::span<double> out) {
    if (out.size() != config.output_dim()) throw ShapeError("fourier output has wrong width");
    std::size_t k = 0;
    double omega = std::numbers::pi;
    for (int i = 0; i < config.octaves; ++i, omega *= 2.0) {
        for (int axis = 0; axis < 3; ++axis) {
            const double phase = omega * p[axis];
            out[k++] = std::sin(phase);
            out[k++] = std::cos(phase);
        }
    }
}

std::vector<double> fourier_encode(const Vec3& p, const FourierConfig& config) {
    std::vector<double> out(config.output_dim());
    fourier_encode(p, config, out);
    return out;
}

void HashGridConfig::validate() const {
    if (levels < 1) throw ConfigError("hash grid needs at least one level");
    if (base_resolution < 2) throw ConfigError("hash grid base resolution must be >= 2");
    if (!(growth >= 1.0)) throw ConfigError("hash grid growth must be >= 1");
    if (log2_table_size < 1 || log2_table_size >= 32) {
        throw ConfigError("log2 table size must lie in [1, 31]");
    }
    if (features_per_level < 1) throw ConfigError("features per level must be >= 1");
    const double finest = base_resolution * std::pow(growth, levels - 1);
    if (finest > 4.0e9) throw ConfigError("finest hash grid resolution overflows 32-bit indices");
}

std::uint32_t HashGridConfig::resolution(int level) const {
    return static_cast<std::uint32_t>(std::floor(base_resolution * std::pow(growth, level)));
}

std::uint32_t hash_slot(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz,
                        std::uint32_t resolution, int log2_table_size) {
    const std::uint64_t table = std::uint64_t{1} << log2_table_size;
    const std::uint64_t r = resolution;
    if (r <= (std::uint64_t{1} << 21) && r * r * r <= table) {
        return static_cast<std::uint32_t>(ix + r * (iy + r * iz));
    }
    const std::uint32_t h = (ix * 1u) ^ (iy * 2654435761u) ^ (iz * 805459861u);
    return h & static_cast<std::uint32_t>(table - 1);
}

CornerFootprint level_footprint(const Vec3& p, const HashGridConfig& config, int level) {
    const std::uint32_t r = config.resolution(level);
    const Vec3 q = clamp_to_domain(p);
    detail::AxisCell cell[3];
    for (int a = 0; a < 3; ++a) cell[a] = detail::locate(q[a], r);

    CornerFootprint fp{};
    for (int c = 0; c < 8; ++c) {
        std::uint32_t idx[3];
        double w = 1.0;
        for (int a = 0; a < 3; ++a) {
            const int bit = (c >> a) & 1;
            idx[a] = cell[a].lower + static_cast<std::uint32_t>(bit);
            w *= bit ? cell[a].frac : 1.0 - cell[a].frac;
        }
        fp.slot[c] = hash_slot(idx[0], idx[1], idx[2], r, config.log2_table_size);
        fp.weight[c] = w;
    }
    return fp;
}

template <typename S>
HashGrid<S>::HashGrid(const HashGridConfig& config) : config_(config) {
    config_.validate();
    tables_.assign(config_.parameter_count(), S(0));
}

template <typename S>
void HashGrid<S>::initialize(std::mt19937_64& rng, double scale) {
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& t : tables_) t = static_cast<S>(u(rng));
}

template <typename S>
std::vector<S> HashGrid<S>::encode(const Vec3& p) const {
    FeatureMatrix<S> out(config_.output_dim(), 1);
    encode(std::span<const Vec3>(&p, 1), out, 0);
    std::vector<S> v(config_.output_dim());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = out(i, 0);
    return v;
}

template <typename S>
void HashGrid<S>::encode(std::span<const Vec3> positions, FeatureMatrix<S>& out,
                         std::size_t row_offset) const {
    if (out.cols() != positions.size() || out.rows() < row_offset + config_.output_dim()) {
        throw ShapeError("hash grid output matrix has wrong shape");
    }
    const auto F = static_cast<std::size_t>(config_.features_per_level);
    const std::size_t level_stride = config_.table_size() * F;
    for (int level = 0; level < config_.levels; ++level) {
        const S* table = tables_.data() + static_cast<std::size_t>(level) * level_stride;
        const std::size_t row0 = row_offset + static_cast<std::size_t>(level) * F;
        for (std::size_t b = 0; b < positions.size(); ++b) {
            const CornerFootprint fp = level_footprint(positions[b], config_, level);
            for (std::size_t f = 0; f < F; ++f) {
                S acc = S(0);
                for (int c = 0; c < 8; ++c) {
                    acc += static_cast<S>(fp.weight[c]) * table[fp.slot[c] * F + f];
                }
                out(row0 + f, b) = acc;
            }
        }
    }
}

template <typename S>
void HashGrid<S>::backward(const Vec3& p, std::span<const S> upstream,
                           std::span<S> grad) const {
    FeatureMatrix<S> up(config_.output_dim(), 1);
    if (upstream.size() != config_.output_dim()) throw ShapeError("upstream has wrong width");
    for (std::size_t i = 0; i < upstream.size(); ++i) up(i, 0) = upstream[i];
    backward(std::span<const Vec3>(&p, 1), up, 0, grad);
}

template <typename S>
void HashGrid<S>::backward(std::span<const Vec3> positions, const FeatureMatrix<S>& upstream,
                           std::size_t row_offset, std::span<S> grad) const {
    if (grad.size() != tables_.size()) throw ShapeError("hash grid gradient has wrong size");
    if (upstream.cols() != positions.size() ||
        upstream.rows() < row_offset + config_.output_dim()) {
        throw ShapeError("hash grid upstream matrix has wrong shape");
    }
    const auto F = static_cast<std::size_t>(config_.features_per_level);
    const std::size_t level_stride = config_.table_size() * F;
    for (int level = 0; level < config_.levels; ++level) {
        S* g = grad.data() + static_cast<std::size_t>(level) * level_stride;
        const std::size_t row0 = row_offset + static_cast<std::size_t>(level) * F;
        for (std::size_t b = 0; b < positions.size(); ++b) {
            const CornerFootprint fp = level_footprint(positions[b], config_, level);
            for (int c = 0; c < 8; ++c) {
                if (fp.weight[c] == 0.0) continue;
                const auto w = static_cast<S>(fp.weight[c]);
                for (std::size_t f = 0; f < F; ++f) {
                    g[fp.slot[c] * F + f] += upstream(row0 + f, b) * w;
                }
            }
        }
    }
}

template class HashGrid<float>;
template class HashGrid<double>;

} // namespace ndf
