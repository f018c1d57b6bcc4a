#include "ndf/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <set>

#include <Eigen/Dense>

#include "ndf/binary_io.hpp"
#include "ndf/error.hpp"
#include "grid_cell.hpp"

namespace ndf {

namespace {

constexpr std::uint32_t kEnsembleVersion = 1;

} // namespace

Vec3 clamp_to_domain(const Vec3& p) {
    return {std::clamp(p[0], -1.0, 1.0), std::clamp(p[1], -1.0, 1.0),
            std::clamp(p[2], -1.0, 1.0)};
}

void GridDomain::validate() const {
    if (nx < 2 || ny < 2 || nz < 2) {
        throw ParameterError("grid domain needs at least 2 nodes per axis");
    }
}

EnsembleField::EnsembleField(GridDomain domain, std::uint32_t member_count,
                             std::vector<std::string> variables, std::vector<float> values)
    : domain_(domain), members_(member_count), variables_(std::move(variables)),
      values_(std::move(values)) {
    domain_.validate();
    if (members_ == 0) throw ParameterError("ensemble needs at least one member");
    if (variables_.empty()) throw ParameterError("ensemble needs at least one variable");
    std::set<std::string> seen;
    for (const auto& name : variables_) {
        if (name.empty()) throw ParameterError("variable names must be non-empty");
        if (!seen.insert(name).second) {
            throw ParameterError("duplicate variable name '" + name + "'");
        }
    }
    const std::size_t expected = variables_.size() * members_ * domain_.node_count();
    if (values_.size() != expected) {
        throw ParameterError("ensemble payload has " + std::to_string(values_.size()) +
                             " values, expected " + std::to_string(expected));
    }
    for (float v : values_) {
        if (!std::isfinite(v)) throw DataError("ensemble contains non-finite values");
    }
}

std::size_t EnsembleField::variable_index(const std::string& name) const {
    auto it = std::find(variables_.begin(), variables_.end(), name);
    if (it == variables_.end()) throw LookupError("unknown variable '" + name + "'");
    return static_cast<std::size_t>(it - variables_.begin());
}

std::span<const float> EnsembleField::member_grid(std::size_t variable,
                                                  std::uint32_t member) const {
    if (variable >= variables_.size()) throw LookupError("variable index out of range");
    if (member >= members_) throw LookupError("member index out of range");
    const std::size_t n = domain_.node_count();
    return std::span<const float>(values_).subspan((variable * members_ + member) * n, n);
}

void sample_into(const EnsembleField& field, std::size_t variable, const Vec3& p,
                 std::span<double> out) {
    if (variable >= field.variable_count()) throw LookupError("variable index out of range");
    const GridDomain& d = field.domain();
    const Vec3 q = clamp_to_domain(p);
    const auto cx = detail::locate(q[0], d.nx);
    const auto cy = detail::locate(q[1], d.ny);
    const auto cz = detail::locate(q[2], d.nz);

    const std::size_t sx = 1;
    const std::size_t sy = d.nx;
    const std::size_t sz = std::size_t{d.nx} * d.ny;
    const std::size_t base = d.index(cx.lower, cy.lower, cz.lower);
    const double fx = cx.frac, fy = cy.frac, fz = cz.frac;

    const std::size_t nodes = d.node_count();
    const float* grid = field.values().data() + variable * field.member_count() * nodes;
    for (std::uint32_t m = 0; m < field.member_count(); ++m, grid += nodes) {
        const float* c = grid + base;
        // Successive linear blends along x, then y, then z.
        auto lerp = [](double a, double b, double t) { return (1.0 - t) * a + t * b; };
        const double x00 = lerp(c[0], c[sx], fx);
        const double x10 = lerp(c[sy], c[sy + sx], fx);
        const double x01 = lerp(c[sz], c[sz + sx], fx);
        const double x11 = lerp(c[sz + sy], c[sz + sy + sx], fx);
        out[m] = lerp(lerp(x00, x10, fy), lerp(x01, x11, fy), fz);
    }
}

SampleVector sample_at(const EnsembleField& field, std::size_t variable, const Vec3& p) {
    SampleVector out(field.member_count());
    sample_into(field, variable, p, out);
    return out;
}

SampleVector sample_at(const EnsembleField& field, const std::string& variable,
                       const Vec3& p) {
    return sample_at(field, field.variable_index(variable), p);
}

EnsembleField read_ensemble(std::istream& in) {
    io::expect_magic(in, "NDFE");
    const auto version = io::read_pod<std::uint32_t>(in, "version");
    if (version != kEnsembleVersion) {
        throw FormatError("unsupported NDFE version " + std::to_string(version));
    }
    GridDomain domain;
    domain.nx = io::read_pod<std::uint32_t>(in, "nx");
    domain.ny = io::read_pod<std::uint32_t>(in, "ny");
    domain.nz = io::read_pod<std::uint32_t>(in, "nz");
    const auto members = io::read_pod<std::uint32_t>(in, "member count");
    const auto var_count = io::read_pod<std::uint32_t>(in, "variable count");
    if (domain.nx < 2 || domain.ny < 2 || domain.nz < 2 || members == 0 || var_count == 0) {
        throw CorruptFileError("NDFE header declares an empty or degenerate grid");
    }

    std::vector<std::string> names;
    names.reserve(var_count);
    for (std::uint32_t v = 0; v < var_count; ++v) {
        const auto len = io::read_pod<std::uint16_t>(in, "name length");
        std::string name(len, '\0');
        io::read_array(in, std::span<char>(name.data(), name.size()), "variable name");
        names.push_back(std::move(name));
    }

    const std::size_t count = std::size_t{var_count} * members * domain.node_count();
    std::vector<float> values(count);
    io::read_array(in, std::span<float>(values), "ensemble payload");
    if (!io::at_end(in)) throw CorruptFileError("trailing bytes after NDFE payload");

    try {
        return EnsembleField(domain, members, std::move(names), std::move(values));
    } catch (const ParameterError& e) {
        throw CorruptFileError(e.what());
    }
}

EnsembleField load_ensemble(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open ensemble file " + path.string());
    return read_ensemble(in);
}

void write_ensemble(const EnsembleField& field, std::ostream& out) {
    io::write_magic(out, "NDFE");
    io::write_pod<std::uint32_t>(out, kEnsembleVersion);
    io::write_pod<std::uint32_t>(out, field.domain().nx);
    io::write_pod<std::uint32_t>(out, field.domain().ny);
    io::write_pod<std::uint32_t>(out, field.domain().nz);
    io::write_pod<std::uint32_t>(out, field.member_count());
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(field.variable_count()));
    for (const auto& name : field.variables()) {
        if (name.size() > 0xFFFF) throw ParameterError("variable name too long");
        io::write_pod<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
    }
    io::write_array(out, field.values());
}

void save_ensemble(const EnsembleField& field, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write ensemble file " + path.string());
    write_ensemble(field, out);
    if (!out) throw Error("failed writing ensemble file " + path.string());
}

std::string to_string(CovarianceKernel::Kind kind) {
    switch (kind) {
    case CovarianceKernel::Kind::SquaredExponential: return "squared_exponential";
    case CovarianceKernel::Kind::WhiteNoise: return "white_noise";
    case CovarianceKernel::Kind::LinearMix: return "linear_mix";
    }
    return "unknown";
}

CovarianceKernel::Kind kernel_kind_from_string(const std::string& name) {
    if (name == "squared_exponential" || name == "se") {
        return CovarianceKernel::Kind::SquaredExponential;
    }
    if (name == "white_noise") return CovarianceKernel::Kind::WhiteNoise;
    if (name == "linear_mix") return CovarianceKernel::Kind::LinearMix;
    throw ParameterError("unknown covariance kernel '" + name + "'");
}

namespace {

/// Square root A of the 1D squared-exponential covariance (A * A^T = K),
/// from its eigendecomposition with negative round-off eigenvalues dropped.
Eigen::MatrixXd axis_factor(std::uint32_t count, double length_scale) {
    Eigen::MatrixXd k(count, count);
    for (std::uint32_t i = 0; i < count; ++i) {
        for (std::uint32_t j = 0; j < count; ++j) {
            const double d = node_coordinate(i, count) - node_coordinate(j, count);
            k(i, j) = std::exp(-d * d / (2.0 * length_scale * length_scale));
        }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k);
    Eigen::VectorXd root = solver.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return solver.eigenvectors() * root.asDiagonal();
}

class FieldSampler {
public:
    FieldSampler(const GridDomain& domain, const CovarianceKernel& kernel)
        : domain_(domain), white_(kernel.kind == CovarianceKernel::Kind::WhiteNoise) {
        if (!white_) {
            ax_ = axis_factor(domain.nx, kernel.length_scale);
            ay_ = axis_factor(domain.ny, kernel.length_scale);
            az_ = axis_factor(domain.nz, kernel.length_scale);
        }
    }

    /// One zero-mean unit-variance field, x fastest.
    std::vector<double> draw(std::mt19937_64& rng) const {
        std::normal_distribution<double> normal(0.0, 1.0);
        const std::size_t n = domain_.node_count();
        std::vector<double> w(n);
        for (double& v : w) v = normal(rng);
        if (white_) return w;
        apply_axis(w, ax_, 0);
        apply_axis(w, ay_, 1);
        apply_axis(w, az_, 2);
        return w;
    }

private:
    void apply_axis(std::vector<double>& f, const Eigen::MatrixXd& a, int axis) const {
        const std::uint32_t dims[3] = {domain_.nx, domain_.ny, domain_.nz};
        const std::size_t strides[3] = {1, domain_.nx, std::size_t{domain_.nx} * domain_.ny};
        const std::uint32_t len = dims[axis];
        const std::size_t stride = strides[axis];
        std::vector<double> line(len), mixed(len);
        for (std::size_t start = 0; start < f.size(); ++start) {
            // Visit each line once: starts are nodes whose axis index is 0.
            if ((start / stride) % len != 0) continue;
            for (std::uint32_t i = 0; i < len; ++i) line[i] = f[start + i * stride];
            for (std::uint32_t i = 0; i < len; ++i) {
                double acc = 0.0;
                for (std::uint32_t j = 0; j < len; ++j) acc += a(i, j) * line[j];
                mixed[i] = acc;
            }
            for (std::uint32_t i = 0; i < len; ++i) f[start + i * stride] = mixed[i];
        }
    }

    GridDomain domain_;
    bool white_;
    Eigen::MatrixXd ax_, ay_, az_;
};

} // namespace

EnsembleField generate_synthetic(const GridDomain& domain, std::uint32_t member_count,
                                 const std::vector<std::string>& variables,
                                 const CovarianceKernel& kernel, std::uint64_t seed) {
    domain.validate();
    if (member_count == 0) throw ParameterError("member_count must be positive");
    if (variables.empty()) throw ParameterError("at least one variable is required");
    if (kernel.kind != CovarianceKernel::Kind::WhiteNoise && !(kernel.length_scale > 0.0)) {
        throw ParameterError("length scale must be positive");
    }
    if (kernel.kind == CovarianceKernel::Kind::LinearMix) {
        if (variables.size() != 2) {
            throw ParameterError("linear-mix kernel needs exactly two variables");
        }
        if (!(std::abs(kernel.mix) <= 1.0)) throw ParameterError("mix must lie in [-1, 1]");
    }

    const FieldSampler sampler(domain, kernel);
    const std::size_t nodes = domain.node_count();
    std::vector<float> values(variables.size() * member_count * nodes);
    std::mt19937_64 rng(seed);

    auto store = [&](std::size_t variable, std::uint32_t member, const std::vector<double>& f) {
        float* dst = values.data() + (variable * member_count + member) * nodes;
        for (std::size_t i = 0; i < nodes; ++i) dst[i] = static_cast<float>(f[i]);
    };

    for (std::uint32_t m = 0; m < member_count; ++m) {
        if (kernel.kind == CovarianceKernel::Kind::LinearMix) {
            const auto z0 = sampler.draw(rng);
            auto z1 = sampler.draw(rng);
            const double other = std::sqrt(std::max(0.0, 1.0 - kernel.mix * kernel.mix));
            for (std::size_t i = 0; i < nodes; ++i) z1[i] = kernel.mix * z0[i] + other * z1[i];
            store(0, m, z0);
            store(1, m, z1);
        } else {
            for (std::size_t v = 0; v < variables.size(); ++v) store(v, m, sampler.draw(rng));
        }
    }
    return EnsembleField(domain, member_count, variables, std::move(values));
}

} // namespace ndf
