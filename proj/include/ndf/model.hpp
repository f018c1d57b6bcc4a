#pragma once

// Bipartite neural dependence field: two position branches (hash grid plus
// optional encoder MLP), an element-wise merge, and a shared decoder.

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ndf/correlation.hpp"
#include "ndf/encoding.hpp"
#include "ndf/feature_matrix.hpp"
#include "ndf/mlp.hpp"

namespace ndf {

enum class MergeMode { Multiply, Concat, Add, AbsDiff };

std::string to_string(MergeMode mode);
MergeMode merge_mode_from_string(const std::string& name);

/// Which argument of the field a branch serves.
enum class Role { Mu = 0, Nu = 1 };

struct ArchitectureDescriptor {
    FourierConfig fourier{4};
    HashGridConfig grid{6, 16, 2.0, 16, 2};
    int encoder_layers = 4;   // 0: grid-only branches
    int decoder_layers = 4;
    int hidden_channels = 32;
    Activation activation = Activation::SnakeAlt;
    MergeMode merge = MergeMode::Multiply;
    bool shared_encoder = true;
    bool concat_nu_first = false;  // set by swapping roles of a concat model
    std::string var_mu = "v0";
    std::string var_nu = "v0";
    CorrelationMeasure measure;

    /// l=6, c=128, T=30, L=12.
    static ArchitectureDescriptor full_scale();
    /// l=4, c=32, T=16, L=4.
    static ArchitectureDescriptor desk_default();

    /// Throws ConfigError on inconsistent settings.
    void validate() const;

    std::size_t embedding_width() const;
    std::size_t encoder_output_width() const;
    std::size_t decoder_input_width() const;
    std::vector<std::uint32_t> encoder_widths() const;
    std::vector<std::uint32_t> decoder_widths() const;

    std::size_t branch_count() const { return shared_encoder ? 1 : 2; }
    std::size_t grid_parameter_count() const;
    std::size_t mlp_parameter_count() const;
    /// Stored float32 parameter bytes (hash tables plus MLPs).
    std::size_t grid_bytes() const { return 4 * grid_parameter_count(); }
    std::size_t mlp_bytes() const { return 4 * mlp_parameter_count(); }
    std::size_t model_bytes() const { return grid_bytes() + mlp_bytes(); }

    bool operator==(const ArchitectureDescriptor&) const = default;
};

nlohmann::json to_json(const ArchitectureDescriptor& d);
/// Missing keys keep their desk defaults. Throws ConfigError on bad values.
ArchitectureDescriptor descriptor_from_json(const nlohmann::json& j);

template <typename S>
struct Branch {
    HashGrid<S> grid;
    Mlp<S> encoder;       // empty when the model is grid-only
    bool has_encoder = false;
};

template <typename S>
struct NdfGradient {
    std::vector<std::vector<S>> grids;       // per branch, tables() layout
    std::vector<MlpGradient<S>> encoders;    // per branch
    MlpGradient<S> decoder;

    void zero();
};

/// Everything backward() needs from a training forward pass.
template <typename S>
struct NdfTape {
    std::array<std::vector<Vec3>, 2> positions;
    std::array<FeatureMatrix<S>, 2> embedding;
    std::array<MlpTape<S>, 2> encoder;
    std::array<FeatureMatrix<S>, 2> encoded;
    FeatureMatrix<S> merged;
    MlpTape<S> decoder;
    FeatureMatrix<S> output;
};

template <typename S>
class NdfModel {
public:
    /// Zero-parameter model; call initialize() for training.
    explicit NdfModel(const ArchitectureDescriptor& descriptor);
    NdfModel(const NdfModel& other);
    NdfModel& operator=(const NdfModel& other);
    NdfModel(NdfModel&& other) noexcept;
    NdfModel& operator=(NdfModel&& other) noexcept;

    void initialize(std::uint64_t seed, double grid_scale = 1e-4);

    const ArchitectureDescriptor& descriptor() const { return descriptor_; }
    std::size_t branch_count() const { return branches_.size(); }
    std::size_t branch_index(Role role) const { return role_branch_[static_cast<int>(role)]; }
    const Branch<S>& branch(Role role) const { return branches_[branch_index(role)]; }
    const Mlp<S>& decoder() const { return decoder_; }

    // Mutable access marks the parameters as unverified.
    Branch<S>& branch_mut(Role role);
    Mlp<S>& decoder_mut();

    /// Field value for one pair.
    S forward(const Vec3& p_mu, const Vec3& p_nu) const;
    /// Field values for paired positions. Each output is bit-identical to the
    /// single-pair call.
    void forward(std::span<const Vec3> p_mu, std::span<const Vec3> p_nu, std::span<S> out) const;

    /// Branch output (encoder features, or the raw embedding when grid-only)
    /// for the `role` argument, one column per position.
    void encode(Role role, std::span<const Vec3> positions, FeatureMatrix<S>& features) const;
    /// Merges branch outputs and decodes. Either side may have a single
    /// column, which is broadcast against the other.
    void decode(const FeatureMatrix<S>& mu, const FeatureMatrix<S>& nu, std::span<S> out) const;

    /// Training pass; skips the parameter finiteness check.
    void forward(std::span<const Vec3> p_mu, std::span<const Vec3> p_nu, NdfTape<S>& tape) const;
    /// Accumulates parameter gradients for upstream dy (one entry per sample).
    void backward(const NdfTape<S>& tape, std::span<const S> dy, NdfGradient<S>& grad) const;

    NdfGradient<S> zero_gradient() const;

    /// Per branch: grid tables, then encoder weight/bias blocks; decoder last.
    std::vector<std::span<S>> parameter_blocks();
    std::vector<std::span<const S>> parameter_blocks() const;
    std::size_t parameter_count() const;

    /// Exchanges the argument roles, so the result computes (p1, p2) ->
    /// this(p2, p1) exactly.
    void swap_roles();

    /// Throws ModelCorruptError when any parameter is NaN or infinite.
    void check_finite() const;

private:
    void embed(const Branch<S>& branch, std::span<const Vec3> positions,
               FeatureMatrix<S>& out) const;
    void run_branch(Role role, std::span<const Vec3> positions, FeatureMatrix<S>& embedding,
                    FeatureMatrix<S>& encoded, MlpTape<S>* tape) const;
    void merge(const FeatureMatrix<S>& mu, const FeatureMatrix<S>& nu,
               FeatureMatrix<S>& out) const;
    void ensure_finite() const;

    ArchitectureDescriptor descriptor_;
    std::vector<Branch<S>> branches_;
    std::array<std::size_t, 2> role_branch_{0, 0};
    Mlp<S> decoder_;
    mutable std::atomic<bool> verified_{false};
};

template <typename S>
std::vector<std::span<S>> gradient_blocks(NdfGradient<S>& grad);

/// Copies parameters between precisions (e.g. float training weights into a
/// double model for checks).
template <typename To, typename From>
NdfModel<To> convert_model(const NdfModel<From>& model);

void write_model(const NdfModel<float>& model, std::ostream& out);
NdfModel<float> read_model(std::istream& in);
void save_model(const NdfModel<float>& model, const std::filesystem::path& path);
NdfModel<float> load_model(const std::filesystem::path& path);

extern template class NdfModel<float>;
extern template class NdfModel<double>;

} // namespace ndf
