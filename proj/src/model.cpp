#include "ndf/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "ndf/binary_io.hpp"
#include "ndf/error.hpp"

namespace ndf {

namespace {

constexpr std::uint32_t kModelVersion = 1;

} // namespace

std::string to_string(MergeMode mode) {
    switch (mode) {
    case MergeMode::Multiply: return "multiply";
    case MergeMode::Concat: return "concat";
    case MergeMode::Add: return "add";
    case MergeMode::AbsDiff: return "absdiff";
    }
    return "multiply";
}

MergeMode merge_mode_from_string(const std::string& name) {
    if (name == "multiply") return MergeMode::Multiply;
    if (name == "concat") return MergeMode::Concat;
    if (name == "add") return MergeMode::Add;
    if (name == "absdiff") return MergeMode::AbsDiff;
    throw ConfigError("unknown merge mode '" + name + "'");
}

// ---------------------------------------------------------------------------
// Descriptor

ArchitectureDescriptor ArchitectureDescriptor::full_scale() {
    ArchitectureDescriptor d;
    d.fourier.octaves = 12;
    d.grid.log2_table_size = 30;
    d.encoder_layers = 6;
    d.decoder_layers = 6;
    d.hidden_channels = 128;
    return d;
}

ArchitectureDescriptor ArchitectureDescriptor::desk_default() { return {}; }

void ArchitectureDescriptor::validate() const {
    fourier.validate();
    grid.validate();
    if (encoder_layers < 0) throw ConfigError("encoder_layers must be >= 0");
    if (decoder_layers < 1) throw ConfigError("decoder_layers must be >= 1");
    if (hidden_channels < 1) throw ConfigError("hidden_channels must be >= 1");
    if (var_mu.empty() || var_nu.empty()) throw ConfigError("variable names must be non-empty");
    if (shared_encoder && var_mu != var_nu) {
        throw ConfigError("a shared encoder requires var_mu == var_nu");
    }
    if (concat_nu_first && merge != MergeMode::Concat) {
        throw ConfigError("concat_nu_first only applies to concat merges");
    }
    if (measure.ksg_k < 1) throw ConfigError("ksg k must be >= 1");
}

std::size_t ArchitectureDescriptor::embedding_width() const {
    return 3 + fourier.output_dim() + grid.output_dim();
}

std::size_t ArchitectureDescriptor::encoder_output_width() const {
    return encoder_layers == 0 ? embedding_width() : static_cast<std::size_t>(hidden_channels);
}

std::size_t ArchitectureDescriptor::decoder_input_width() const {
    return merge == MergeMode::Concat ? 2 * encoder_output_width() : encoder_output_width();
}

std::vector<std::uint32_t> ArchitectureDescriptor::encoder_widths() const {
    if (encoder_layers == 0) return {};
    std::vector<std::uint32_t> w{static_cast<std::uint32_t>(embedding_width())};
    for (int l = 0; l < encoder_layers; ++l) w.push_back(static_cast<std::uint32_t>(hidden_channels));
    return w;
}

std::vector<std::uint32_t> ArchitectureDescriptor::decoder_widths() const {
    std::vector<std::uint32_t> w{static_cast<std::uint32_t>(decoder_input_width())};
    for (int l = 0; l + 1 < decoder_layers; ++l) {
        w.push_back(static_cast<std::uint32_t>(hidden_channels));
    }
    w.push_back(1);
    return w;
}

namespace {

std::size_t mlp_params(const std::vector<std::uint32_t>& widths) {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        n += std::size_t{widths[i]} * widths[i + 1] + widths[i + 1];
    }
    return n;
}

} // namespace

std::size_t ArchitectureDescriptor::grid_parameter_count() const {
    return branch_count() * grid.parameter_count();
}

std::size_t ArchitectureDescriptor::mlp_parameter_count() const {
    return branch_count() * mlp_params(encoder_widths()) + mlp_params(decoder_widths());
}

nlohmann::json to_json(const ArchitectureDescriptor& d) {
    return {
        {"fourier_octaves", d.fourier.octaves},
        {"grid",
         {{"levels", d.grid.levels},
          {"base_resolution", d.grid.base_resolution},
          {"growth", d.grid.growth},
          {"log2_table_size", d.grid.log2_table_size},
          {"features_per_level", d.grid.features_per_level}}},
        {"encoder_layers", d.encoder_layers},
        {"decoder_layers", d.decoder_layers},
        {"hidden_channels", d.hidden_channels},
        {"activation", to_string(d.activation)},
        {"merge", to_string(d.merge)},
        {"shared_encoder", d.shared_encoder},
        {"concat_nu_first", d.concat_nu_first},
        {"var_mu", d.var_mu},
        {"var_nu", d.var_nu},
        {"measure", {{"kind", to_string(d.measure.kind)}, {"k", d.measure.ksg_k}}},
        {"widths",
         {{"embedding", d.embedding_width()},
          {"encoder", d.encoder_widths()},
          {"decoder", d.decoder_widths()}}},
    };
}

ArchitectureDescriptor descriptor_from_json(const nlohmann::json& j) {
    ArchitectureDescriptor d;
    try {
        d.fourier.octaves = j.value("fourier_octaves", d.fourier.octaves);
        if (j.contains("grid")) {
            const auto& g = j.at("grid");
            d.grid.levels = g.value("levels", d.grid.levels);
            d.grid.base_resolution = g.value("base_resolution", d.grid.base_resolution);
            d.grid.growth = g.value("growth", d.grid.growth);
            d.grid.log2_table_size = g.value("log2_table_size", d.grid.log2_table_size);
            d.grid.features_per_level = g.value("features_per_level", d.grid.features_per_level);
        }
        d.encoder_layers = j.value("encoder_layers", d.encoder_layers);
        d.decoder_layers = j.value("decoder_layers", d.decoder_layers);
        d.hidden_channels = j.value("hidden_channels", d.hidden_channels);
        d.activation = activation_from_string(j.value("activation", to_string(d.activation)));
        d.merge = merge_mode_from_string(j.value("merge", to_string(d.merge)));
        d.shared_encoder = j.value("shared_encoder", d.shared_encoder);
        d.concat_nu_first = j.value("concat_nu_first", d.concat_nu_first);
        d.var_mu = j.value("var_mu", d.var_mu);
        d.var_nu = j.value("var_nu", d.var_nu);
        if (j.contains("measure")) {
            const auto& m = j.at("measure");
            d.measure.kind = measure_kind_from_string(m.value("kind", to_string(d.measure.kind)));
            d.measure.ksg_k = m.value("k", d.measure.ksg_k);
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("architecture descriptor: ") + e.what());
    } catch (const ParameterError& e) {
        throw ConfigError(std::string("architecture descriptor: ") + e.what());
    }
    d.validate();
    return d;
}

// ---------------------------------------------------------------------------
// Gradient

template <typename S>
void NdfGradient<S>::zero() {
    for (auto& g : grids) std::fill(g.begin(), g.end(), S(0));
    auto clear = [](MlpGradient<S>& m) {
        for (auto& layer : m) {
            std::fill(layer.weight.begin(), layer.weight.end(), S(0));
            std::fill(layer.bias.begin(), layer.bias.end(), S(0));
        }
    };
    for (auto& e : encoders) clear(e);
    clear(decoder);
}

template <typename S>
std::vector<std::span<S>> gradient_blocks(NdfGradient<S>& grad) {
    std::vector<std::span<S>> blocks;
    for (std::size_t b = 0; b < grad.grids.size(); ++b) {
        blocks.emplace_back(grad.grids[b]);
        for (auto& layer : grad.encoders[b]) {
            blocks.emplace_back(layer.weight);
            blocks.emplace_back(layer.bias);
        }
    }
    for (auto& layer : grad.decoder) {
        blocks.emplace_back(layer.weight);
        blocks.emplace_back(layer.bias);
    }
    return blocks;
}

// ---------------------------------------------------------------------------
// Model

template <typename S>
NdfModel<S>::NdfModel(const ArchitectureDescriptor& descriptor) : descriptor_(descriptor) {
    descriptor_.validate();
    branches_.resize(descriptor_.branch_count());
    for (auto& b : branches_) {
        b.grid = HashGrid<S>(descriptor_.grid);
        b.has_encoder = descriptor_.encoder_layers > 0;
        if (b.has_encoder) b.encoder = Mlp<S>(descriptor_.encoder_widths(), descriptor_.activation);
    }
    role_branch_ = {0, branches_.size() - 1};
    decoder_ = Mlp<S>(descriptor_.decoder_widths(), descriptor_.activation);
}

template <typename S>
NdfModel<S>::NdfModel(const NdfModel& other)
    : descriptor_(other.descriptor_), branches_(other.branches_),
      role_branch_(other.role_branch_), decoder_(other.decoder_) {}

template <typename S>
NdfModel<S>& NdfModel<S>::operator=(const NdfModel& other) {
    descriptor_ = other.descriptor_;
    branches_ = other.branches_;
    role_branch_ = other.role_branch_;
    decoder_ = other.decoder_;
    verified_ = false;
    return *this;
}

template <typename S>
NdfModel<S>::NdfModel(NdfModel&& other) noexcept
    : descriptor_(std::move(other.descriptor_)), branches_(std::move(other.branches_)),
      role_branch_(other.role_branch_), decoder_(std::move(other.decoder_)),
      verified_(other.verified_.load()) {}

template <typename S>
NdfModel<S>& NdfModel<S>::operator=(NdfModel&& other) noexcept {
    descriptor_ = std::move(other.descriptor_);
    branches_ = std::move(other.branches_);
    role_branch_ = other.role_branch_;
    decoder_ = std::move(other.decoder_);
    verified_ = other.verified_.load();
    return *this;
}

template <typename S>
void NdfModel<S>::initialize(std::uint64_t seed, double grid_scale) {
    std::mt19937_64 rng(seed);
    for (auto& b : branches_) {
        b.grid.initialize(rng, grid_scale);
        if (b.has_encoder) b.encoder.initialize(rng);
    }
    decoder_.initialize(rng);
    verified_ = false;
}

template <typename S>
Branch<S>& NdfModel<S>::branch_mut(Role role) {
    verified_ = false;
    return branches_[branch_index(role)];
}

template <typename S>
Mlp<S>& NdfModel<S>::decoder_mut() {
    verified_ = false;
    return decoder_;
}

template <typename S>
void NdfModel<S>::check_finite() const {
    for (const auto block : parameter_blocks()) {
        for (const S v : block) {
            if (!std::isfinite(v)) throw ModelCorruptError("model has non-finite parameters");
        }
    }
    verified_ = true;
}

template <typename S>
void NdfModel<S>::ensure_finite() const {
    if (!verified_.load(std::memory_order_acquire)) check_finite();
}

template <typename S>
void NdfModel<S>::embed(const Branch<S>& branch, std::span<const Vec3> positions,
                        FeatureMatrix<S>& out) const {
    const std::size_t batch = positions.size();
    const std::size_t fourier_dim = descriptor_.fourier.output_dim();
    out.resize(descriptor_.embedding_width(), batch);
    std::vector<double> f(fourier_dim);
    for (std::size_t b = 0; b < batch; ++b) {
        const Vec3 p = clamp_to_domain(positions[b]);
        for (int a = 0; a < 3; ++a) out(a, b) = static_cast<S>(p[a]);
        fourier_encode(p, descriptor_.fourier, f);
        for (std::size_t i = 0; i < fourier_dim; ++i) out(3 + i, b) = static_cast<S>(f[i]);
    }
    branch.grid.encode(positions, out, 3 + fourier_dim);
}

template <typename S>
void NdfModel<S>::run_branch(Role role, std::span<const Vec3> positions,
                             FeatureMatrix<S>& embedding, FeatureMatrix<S>& encoded,
                             MlpTape<S>* tape) const {
    const Branch<S>& b = branch(role);
    embed(b, positions, embedding);
    if (b.has_encoder) {
        b.encoder.forward(embedding, encoded, tape);
    } else {
        encoded = embedding;
    }
}

template <typename S>
void NdfModel<S>::merge(const FeatureMatrix<S>& mu, const FeatureMatrix<S>& nu,
                        FeatureMatrix<S>& out) const {
    const std::size_t width = descriptor_.encoder_output_width();
    if (mu.rows() != width || nu.rows() != width) throw ShapeError("branch output width mismatch");
    const std::size_t batch = std::max(mu.cols(), nu.cols());
    if ((mu.cols() != batch && mu.cols() != 1) || (nu.cols() != batch && nu.cols() != 1)) {
        throw ShapeError("branch batches differ and neither is a single column");
    }
    const std::size_t sa = mu.cols() == 1 ? 0 : 1;
    const std::size_t sb = nu.cols() == 1 ? 0 : 1;
    out.resize(descriptor_.decoder_input_width(), batch);

    if (descriptor_.merge == MergeMode::Concat) {
        const FeatureMatrix<S>& first = descriptor_.concat_nu_first ? nu : mu;
        const FeatureMatrix<S>& second = descriptor_.concat_nu_first ? mu : nu;
        const std::size_t s1 = descriptor_.concat_nu_first ? sb : sa;
        const std::size_t s2 = descriptor_.concat_nu_first ? sa : sb;
        for (std::size_t i = 0; i < width; ++i) {
            const S* x = first.row(i);
            const S* y = second.row(i);
            S* o1 = out.row(i);
            S* o2 = out.row(width + i);
            for (std::size_t b = 0; b < batch; ++b) {
                o1[b] = x[b * s1];
                o2[b] = y[b * s2];
            }
        }
        return;
    }
    for (std::size_t i = 0; i < width; ++i) {
        const S* x = mu.row(i);
        const S* y = nu.row(i);
        S* o = out.row(i);
        switch (descriptor_.merge) {
        case MergeMode::Multiply:
            for (std::size_t b = 0; b < batch; ++b) o[b] = x[b * sa] * y[b * sb];
            break;
        case MergeMode::Add:
            for (std::size_t b = 0; b < batch; ++b) o[b] = x[b * sa] + y[b * sb];
            break;
        case MergeMode::AbsDiff:
            for (std::size_t b = 0; b < batch; ++b) o[b] = std::abs(x[b * sa] - y[b * sb]);
            break;
        case MergeMode::Concat: break;
        }
    }
}

template <typename S>
void NdfModel<S>::encode(Role role, std::span<const Vec3> positions,
                         FeatureMatrix<S>& features) const {
    ensure_finite();
    FeatureMatrix<S> embedding;
    run_branch(role, positions, embedding, features, nullptr);
}

template <typename S>
void NdfModel<S>::decode(const FeatureMatrix<S>& mu, const FeatureMatrix<S>& nu,
                         std::span<S> out) const {
    ensure_finite();
    FeatureMatrix<S> merged, y;
    merge(mu, nu, merged);
    if (out.size() != merged.cols()) throw ShapeError("decode output has wrong length");
    decoder_.forward(merged, y);
    std::copy(y.row(0), y.row(0) + y.cols(), out.begin());
}

template <typename S>
void NdfModel<S>::forward(std::span<const Vec3> p_mu, std::span<const Vec3> p_nu,
                          std::span<S> out) const {
    if (p_mu.size() != p_nu.size() || out.size() != p_mu.size()) {
        throw ShapeError("forward: position and output counts differ");
    }
    FeatureMatrix<S> a, b;
    encode(Role::Mu, p_mu, a);
    encode(Role::Nu, p_nu, b);
    decode(a, b, out);
}

template <typename S>
S NdfModel<S>::forward(const Vec3& p_mu, const Vec3& p_nu) const {
    S out{};
    forward(std::span<const Vec3>(&p_mu, 1), std::span<const Vec3>(&p_nu, 1),
            std::span<S>(&out, 1));
    return out;
}

template <typename S>
void NdfModel<S>::forward(std::span<const Vec3> p_mu, std::span<const Vec3> p_nu,
                          NdfTape<S>& tape) const {
    if (p_mu.size() != p_nu.size()) throw ShapeError("forward: position counts differ");
    const std::span<const Vec3> pos[2] = {p_mu, p_nu};
    for (int r = 0; r < 2; ++r) {
        tape.positions[r].assign(pos[r].begin(), pos[r].end());
        run_branch(static_cast<Role>(r), pos[r], tape.embedding[r], tape.encoded[r],
                   &tape.encoder[r]);
    }
    merge(tape.encoded[0], tape.encoded[1], tape.merged);
    decoder_.forward(tape.merged, tape.output, &tape.decoder);
}

template <typename S>
void NdfModel<S>::backward(const NdfTape<S>& tape, std::span<const S> dy,
                           NdfGradient<S>& grad) const {
    const std::size_t batch = tape.output.cols();
    if (dy.size() != batch) throw ShapeError("backward: upstream length differs from batch");
    if (grad.grids.size() != branches_.size()) throw ShapeError("backward: gradient shape");

    FeatureMatrix<S> dout(1, batch), dmerged;
    std::copy(dy.begin(), dy.end(), dout.row(0));
    decoder_.backward(tape.decoder, dout, grad.decoder, &dmerged);

    const std::size_t width = descriptor_.encoder_output_width();
    std::array<FeatureMatrix<S>, 2> denc;
    denc[0].resize(width, batch);
    denc[1].resize(width, batch);
    const auto& A = tape.encoded[0];
    const auto& B = tape.encoded[1];
    if (descriptor_.merge == MergeMode::Concat) {
        const int first = descriptor_.concat_nu_first ? 1 : 0;
        for (std::size_t i = 0; i < width; ++i) {
            std::copy(dmerged.row(i), dmerged.row(i) + batch, denc[first].row(i));
            std::copy(dmerged.row(width + i), dmerged.row(width + i) + batch,
                      denc[1 - first].row(i));
        }
    } else {
        for (std::size_t i = 0; i < width; ++i) {
            const S* dm = dmerged.row(i);
            const S* a = A.row(i);
            const S* b = B.row(i);
            S* da = denc[0].row(i);
            S* db = denc[1].row(i);
            for (std::size_t k = 0; k < batch; ++k) {
                switch (descriptor_.merge) {
                case MergeMode::Multiply:
                    da[k] = dm[k] * b[k];
                    db[k] = dm[k] * a[k];
                    break;
                case MergeMode::Add:
                    da[k] = dm[k];
                    db[k] = dm[k];
                    break;
                case MergeMode::AbsDiff: {
                    const S s = a[k] > b[k] ? S(1) : (a[k] < b[k] ? S(-1) : S(0));
                    da[k] = dm[k] * s;
                    db[k] = -dm[k] * s;
                    break;
                }
                case MergeMode::Concat: break;
                }
            }
        }
    }

    const std::size_t hash_row = 3 + descriptor_.fourier.output_dim();
    for (int r = 0; r < 2; ++r) {
        const std::size_t bi = role_branch_[r];
        const Branch<S>& br = branches_[bi];
        if (br.has_encoder) {
            FeatureMatrix<S> dembed;
            br.encoder.backward(tape.encoder[r], denc[r], grad.encoders[bi], &dembed, hash_row);
            br.grid.backward(tape.positions[r], dembed, hash_row, grad.grids[bi]);
        } else {
            br.grid.backward(tape.positions[r], denc[r], hash_row, grad.grids[bi]);
        }
    }
}

template <typename S>
NdfGradient<S> NdfModel<S>::zero_gradient() const {
    NdfGradient<S> g;
    for (const auto& b : branches_) {
        g.grids.emplace_back(b.grid.tables().size(), S(0));
        g.encoders.push_back(b.has_encoder ? b.encoder.zero_gradient() : MlpGradient<S>{});
    }
    g.decoder = decoder_.zero_gradient();
    return g;
}

template <typename S>
std::vector<std::span<S>> NdfModel<S>::parameter_blocks() {
    verified_ = false;
    std::vector<std::span<S>> blocks;
    for (auto& b : branches_) {
        blocks.push_back(b.grid.tables());
        if (b.has_encoder) {
            for (auto block : b.encoder.parameter_blocks()) blocks.push_back(block);
        }
    }
    for (auto block : decoder_.parameter_blocks()) blocks.push_back(block);
    return blocks;
}

template <typename S>
std::vector<std::span<const S>> NdfModel<S>::parameter_blocks() const {
    std::vector<std::span<const S>> blocks;
    for (const auto& b : branches_) {
        blocks.push_back(b.grid.tables());
        if (b.has_encoder) {
            for (auto block : b.encoder.parameter_blocks()) blocks.push_back(block);
        }
    }
    for (auto block : decoder_.parameter_blocks()) blocks.push_back(block);
    return blocks;
}

template <typename S>
std::size_t NdfModel<S>::parameter_count() const {
    std::size_t n = 0;
    for (const auto block : parameter_blocks()) n += block.size();
    return n;
}

template <typename S>
void NdfModel<S>::swap_roles() {
    std::swap(role_branch_[0], role_branch_[1]);
    std::swap(descriptor_.var_mu, descriptor_.var_nu);
    if (descriptor_.merge == MergeMode::Concat) {
        descriptor_.concat_nu_first = !descriptor_.concat_nu_first;
    }
}

template <typename To, typename From>
NdfModel<To> convert_model(const NdfModel<From>& model) {
    // Rebuild in role order so branch 0 serves mu.
    NdfModel<To> out(model.descriptor());
    auto dst = out.parameter_blocks();
    std::vector<std::span<const From>> src;
    const std::size_t roles = model.branch_count();
    for (std::size_t r = 0; r < roles; ++r) {
        const auto& b = model.branch(static_cast<Role>(r));
        src.push_back(b.grid.tables());
        if (b.has_encoder) {
            for (auto block : b.encoder.parameter_blocks()) src.push_back(block);
        }
    }
    for (auto block : model.decoder().parameter_blocks()) src.push_back(block);
    if (src.size() != dst.size()) throw ShapeError("convert_model: block count mismatch");
    for (std::size_t k = 0; k < src.size(); ++k) {
        std::transform(src[k].begin(), src[k].end(), dst[k].begin(),
                       [](From v) { return static_cast<To>(v); });
    }
    return out;
}

// ---------------------------------------------------------------------------
// NDFM codec

void write_model(const NdfModel<float>& model, std::ostream& out) {
    // Canonical role order: blobs for branch(Mu) precede branch(Nu).
    const NdfModel<float> canonical = convert_model<float>(model);
    const std::string header = to_json(canonical.descriptor()).dump();
    io::write_magic(out, "NDFM");
    io::write_pod<std::uint32_t>(out, kModelVersion);
    io::write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    const auto& d = canonical.descriptor();
    const std::size_t branches = d.branch_count();
    for (std::size_t r = 0; r < branches; ++r) {
        io::write_array<float>(out, canonical.branch(static_cast<Role>(r)).grid.tables());
    }
    for (std::size_t r = 0; r < branches; ++r) {
        const auto& b = canonical.branch(static_cast<Role>(r));
        if (!b.has_encoder) continue;
        for (const auto& layer : b.encoder.layers()) {
            io::write_array<float>(out, layer.weight);
            io::write_array<float>(out, layer.bias);
        }
    }
    for (const auto& layer : canonical.decoder().layers()) {
        io::write_array<float>(out, layer.weight);
        io::write_array<float>(out, layer.bias);
    }
    if (!out) throw Error("failed writing model stream");
}

NdfModel<float> read_model(std::istream& in) {
    io::expect_magic(in, "NDFM");
    const auto version = io::read_pod<std::uint32_t>(in, "version");
    if (version != kModelVersion) {
        throw FormatError("unsupported NDFM version " + std::to_string(version));
    }
    const auto header_len = io::read_pod<std::uint32_t>(in, "header length");
    if (header_len == 0 || header_len > (1u << 24)) {
        throw CorruptFileError("implausible NDFM header length");
    }
    std::string header(header_len, '\0');
    io::read_array<char>(in, std::span<char>(header), "descriptor");

    ArchitectureDescriptor d;
    try {
        d = descriptor_from_json(nlohmann::json::parse(header));
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("NDFM descriptor is not valid JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptFileError(std::string("NDFM descriptor rejected: ") + e.what());
    }

    NdfModel<float> model(d);
    const std::size_t branches = d.branch_count();
    for (std::size_t r = 0; r < branches; ++r) {
        io::read_array<float>(in, model.branch_mut(static_cast<Role>(r)).grid.tables(),
                              "hash tables");
    }
    for (std::size_t r = 0; r < branches; ++r) {
        auto& b = model.branch_mut(static_cast<Role>(r));
        if (!b.has_encoder) continue;
        for (auto& layer : b.encoder.layers()) {
            io::read_array<float>(in, std::span<float>(layer.weight), "encoder weights");
            io::read_array<float>(in, std::span<float>(layer.bias), "encoder biases");
        }
    }
    for (auto& layer : model.decoder_mut().layers()) {
        io::read_array<float>(in, std::span<float>(layer.weight), "decoder weights");
        io::read_array<float>(in, std::span<float>(layer.bias), "decoder biases");
    }
    if (!io::at_end(in)) throw CorruptFileError("trailing bytes after NDFM payload");
    model.check_finite();
    return model;
}

void save_model(const NdfModel<float>& model, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    write_model(model, out);
}

NdfModel<float> load_model(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw NotFoundError("cannot open model '" + path.string() + "'");
    return read_model(in);
}

template struct NdfGradient<float>;
template struct NdfGradient<double>;
template class NdfModel<float>;
template class NdfModel<double>;
template std::vector<std::span<float>> gradient_blocks(NdfGradient<float>&);
template std::vector<std::span<double>> gradient_blocks(NdfGradient<double>&);
template NdfModel<float> convert_model(const NdfModel<float>&);
template NdfModel<double> convert_model(const NdfModel<float>&);
template NdfModel<float> convert_model(const NdfModel<double>&);
template NdfModel<double> convert_model(const NdfModel<double>&);

} // namespace ndf
