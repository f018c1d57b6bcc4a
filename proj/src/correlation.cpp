#include "ndf/correlation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <numbers>

#include <spdlog/spdlog.h>

#include "ndf/binary_io.hpp"
#include "ndf/error.hpp"
#include "ndf/parallel.hpp"

namespace ndf {

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ShapeError("pearson: sample vectors differ in length");
    const std::size_t n = a.size();
    if (n < 2) throw ShapeError("pearson: at least two samples are required");

    auto constant = [](std::span<const double> v) {
        return std::all_of(v.begin(), v.end(), [&](double x) { return x == v.front(); });
    };
    if (constant(a) || constant(b)) {
        throw DegenerateInputError("pearson: zero-variance input");
    }

    double mean_a = 0.0, mean_b = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mean_a += a[i];
        mean_b += b[i];
    }
    mean_a /= static_cast<double>(n);
    mean_b /= static_cast<double>(n);

    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double da = a[i] - mean_a;
        const double db = b[i] - mean_b;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw DegenerateInputError("pearson: zero-variance input");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double digamma(double x) {
    if (!(x > 0.0)) throw ParameterError("digamma: argument must be positive");
    double shift = 0.0;
    while (x < 6.0) {
        shift -= 1.0 / x;
        x += 1.0;
    }
    // Asymptotic expansion with Bernoulli-number coefficients.
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    const double series =
        inv2 * (1.0 / 12 -
                inv2 * (1.0 / 120 -
                        inv2 * (1.0 / 252 -
                                inv2 * (1.0 / 240 - inv2 * (1.0 / 132 - inv2 * (691.0 / 32760))))));
    return shift + std::log(x) - 0.5 * inv - series;
}

double gaussian_mi_analytic(double rho) {
    if (!(std::abs(rho) < 1.0)) throw ParameterError("gaussian_mi_analytic: |rho| must be < 1");
    return -0.5 * std::log1p(-rho * rho);
}

double CorrelationMeasure::operator()(std::span<const double> a,
                                      std::span<const double> b) const {
    switch (kind) {
    case Kind::Pearson: return pearson(a, b);
    case Kind::KsgMi: return ksg_mi(a, b, ksg_k);
    }
    throw ParameterError("unknown correlation measure");
}

std::string to_string(CorrelationMeasure::Kind kind) {
    return kind == CorrelationMeasure::Kind::Pearson ? "pearson" : "ksg_mi";
}

CorrelationMeasure::Kind measure_kind_from_string(const std::string& name) {
    if (name == "pearson") return CorrelationMeasure::Kind::Pearson;
    if (name == "ksg_mi" || name == "mi") return CorrelationMeasure::Kind::KsgMi;
    throw ParameterError("unknown correlation measure '" + name + "'");
}

void GridDims::validate() const {
    if (x == 0 || y == 0 || z == 0) throw ParameterError("grid dims must be >= 1");
}

FieldGrid read_field_grid(std::istream& in) {
    io::expect_magic(in, "NDFG");
    const auto version = io::read_pod<std::uint32_t>(in, "version");
    if (version != 1) throw FormatError("unsupported NDFG version " + std::to_string(version));
    GridDims dims;
    dims.x = io::read_pod<std::uint32_t>(in, "X");
    dims.y = io::read_pod<std::uint32_t>(in, "Y");
    dims.z = io::read_pod<std::uint32_t>(in, "Z");
    if (dims.count() == 0) throw CorruptFileError("NDFG header declares an empty grid");
    FieldGrid grid(dims);
    io::read_array(in, std::span<float>(grid.values), "field payload");
    if (!io::at_end(in)) throw CorruptFileError("trailing bytes after NDFG payload");
    return grid;
}

void write_field_grid(const FieldGrid& grid, std::ostream& out) {
    if (grid.values.size() != grid.dims.count()) {
        throw ShapeError("field grid value count does not match its dims");
    }
    io::write_magic(out, "NDFG");
    io::write_pod<std::uint32_t>(out, 1);
    io::write_pod<std::uint32_t>(out, grid.dims.x);
    io::write_pod<std::uint32_t>(out, grid.dims.y);
    io::write_pod<std::uint32_t>(out, grid.dims.z);
    io::write_array(out, std::span<const float>(grid.values));
}

FieldGrid load_field_grid(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open field file " + path.string());
    return read_field_grid(in);
}

void save_field_grid(const FieldGrid& grid, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write field file " + path.string());
    write_field_grid(grid, out);
}

FieldGrid ground_truth_field(const EnsembleField& field, const CorrelationMeasure& measure,
                             std::size_t var_mu, std::size_t var_nu, const Vec3& ref,
                             const GridDims& dims, unsigned threads) {
    dims.validate();
    const SampleVector reference = sample_at(field, var_mu, ref);
    FieldGrid out(dims);
    std::atomic<std::size_t> degenerate{0};

    parallel_for(
        0, dims.count(),
        [&](std::size_t i) {
            SampleVector query(field.member_count());
            sample_into(field, var_nu, dims.coordinate(i), query);
            try {
                out.values[i] = static_cast<float>(measure(reference, query));
            } catch (const DegenerateInputError&) {
                out.values[i] = 0.0f;
                degenerate.fetch_add(1, std::memory_order_relaxed);
            }
        },
        threads);

    if (degenerate > 0) {
        spdlog::warn("ground truth: {} of {} points had degenerate samples and were set to 0",
                     degenerate.load(), dims.count());
    }
    return out;
}

} // namespace ndf
