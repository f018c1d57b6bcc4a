// ndf: command-line front end for ensemble generation, ground truth, training,
// sweeps, evaluation, timing, reconstruction and the HTTP service.
//
// Every command accepts --config FILE.json. Sections used:
//   "synthetic"    {dims, members, variables, kernel, length_scale, mix}
//   "architecture" descriptor fields (see ArchitectureDescriptor)
//   "training"     TrainingConfig fields
//   "sweep"        {table_bits: [...], mlp: [[layers, channels], ...]}
// Flags override config values.

#include <array>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ndf/error.hpp"
#include "ndf/service.hpp"
#include "ndf/training.hpp"

using namespace ndf;
using nlohmann::json;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    unsigned threads = 0;
    bool verbose = false;
};

json section(const Common& common, const char* name) {
    if (common.config.empty()) return json::object();
    std::ifstream in(common.config);
    if (!in) throw NotFoundError("cannot open config '" + common.config + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ConfigError("config '" + common.config + "': " + e.what());
    }
    return j.value(name, json::object());
}

void add_common(CLI::App* cmd, Common& c) {
    cmd->add_option("--config", c.config, "JSON config file");
    cmd->add_option("--seed", c.seed, "Random seed");
    cmd->add_option("--threads", c.threads, "Worker threads (0: all cores)");
    cmd->add_flag("-v,--verbose", c.verbose, "Debug logging");
}

Vec3 to_vec3(const std::vector<double>& v) { return {v[0], v[1], v[2]}; }

GridDims to_dims(const std::vector<std::uint32_t>& v) { return {v[0], v[1], v[2]}; }

CLI::Option* add_triple(CLI::App* cmd, const std::string& name, auto& target,
                        const std::string& help) {
    return cmd->add_option(name, target, help)->delimiter(',')->expected(3);
}

template <typename T>
void override_with(T& dst, const std::optional<T>& src) {
    if (src) dst = *src;
}

// --- gen-synthetic ---------------------------------------------------------

struct GenOptions {
    Common common;
    std::string out;
    std::vector<std::uint32_t> dims;
    std::optional<std::uint32_t> members;
    std::vector<std::string> variables;
    std::optional<std::string> kernel;
    std::optional<double> length_scale;
    std::optional<double> mix;
};

int run_gen(const GenOptions& o) {
    const json cfg = section(o.common, "synthetic");
    GridDomain domain{16, 16, 8};
    if (cfg.contains("dims")) {
        const auto d = cfg.at("dims").get<std::vector<std::uint32_t>>();
        if (d.size() != 3) throw ConfigError("synthetic.dims must have three entries");
        domain = {d[0], d[1], d[2]};
    }
    if (!o.dims.empty()) domain = {o.dims[0], o.dims[1], o.dims[2]};
    std::uint32_t members = cfg.value("members", 100u);
    override_with(members, o.members);
    auto variables = cfg.value("variables", std::vector<std::string>{"v0"});
    if (!o.variables.empty()) variables = o.variables;
    CovarianceKernel kernel;
    kernel.kind = kernel_kind_from_string(
        o.kernel.value_or(cfg.value("kernel", to_string(kernel.kind))));
    kernel.length_scale = o.length_scale.value_or(cfg.value("length_scale", kernel.length_scale));
    kernel.mix = o.mix.value_or(cfg.value("mix", kernel.mix));
    const std::uint64_t seed = o.common.seed.value_or(cfg.value("seed", std::uint64_t{1}));

    const auto field = generate_synthetic(domain, members, variables, kernel, seed);
    save_ensemble(field, o.out);
    spdlog::info("wrote {} ({}x{}x{}, {} members, {} variables)", o.out, domain.nx, domain.ny,
                 domain.nz, members, variables.size());
    return 0;
}

// --- ground-truth ----------------------------------------------------------

struct GroundTruthOptions {
    Common common;
    std::string ensemble, out, measure = "pearson", var_mu = "v0";
    std::optional<std::string> var_nu;
    int k = 3;
    std::vector<double> ref{0, 0, 0};
    std::vector<std::uint32_t> dims;
};

int run_ground_truth(const GroundTruthOptions& o) {
    const auto field = load_ensemble(o.ensemble);
    const CorrelationMeasure measure{measure_kind_from_string(o.measure), o.k};
    const auto& dom = field.domain();
    const GridDims dims = o.dims.empty() ? GridDims{dom.nx, dom.ny, dom.nz} : to_dims(o.dims);
    const auto grid = ground_truth_field(field, measure, field.variable_index(o.var_mu),
                                         field.variable_index(o.var_nu.value_or(o.var_mu)),
                                         to_vec3(o.ref), dims, o.common.threads);
    save_field_grid(grid, o.out);
    spdlog::info("wrote {} ({} values)", o.out, grid.values.size());
    return 0;
}

// --- train / sweep ---------------------------------------------------------

struct TrainOverrides {
    std::optional<int> epochs;
    std::optional<double> lr;
    std::optional<std::size_t> samples, batch, validation;
    std::optional<std::string> loss, measure, var_mu, var_nu, merge;
    std::optional<int> k, table_bits, layers, channels;
    bool grid_only = false;
    bool unshared = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--epochs", epochs);
        cmd->add_option("--lr", lr);
        cmd->add_option("--samples", samples, "Pairs per epoch");
        cmd->add_option("--batch", batch);
        cmd->add_option("--validation", validation, "Validation pairs");
        cmd->add_option("--loss", loss)->check(CLI::IsMember({"l1", "l2"}));
        cmd->add_option("--measure", measure)->check(CLI::IsMember({"pearson", "ksg_mi"}));
        cmd->add_option("--k", k, "KSG neighbours");
        cmd->add_option("--var-mu", var_mu);
        cmd->add_option("--var-nu", var_nu);
        cmd->add_option("--merge", merge)
            ->check(CLI::IsMember({"multiply", "concat", "add", "absdiff"}));
        cmd->add_option("--table-bits", table_bits, "log2 hash table size");
        cmd->add_option("--layers", layers, "Encoder and decoder layers");
        cmd->add_option("--channels", channels, "Hidden channels");
        cmd->add_flag("--grid-only", grid_only, "Drop the encoder MLP");
        cmd->add_flag("--unshared", unshared, "Separate encoders for mu and nu");
    }
};

std::pair<ArchitectureDescriptor, TrainingConfig> resolve_training(const Common& common,
                                                                   const TrainOverrides& o) {
    const json arch_cfg = section(common, "architecture");
    const json train_cfg = section(common, "training");
    ArchitectureDescriptor arch = arch_cfg.empty() ? ArchitectureDescriptor::desk_default()
                                                   : descriptor_from_json(arch_cfg);
    TrainingConfig cfg = training_config_from_json(train_cfg, TrainingConfig::desk_defaults());

    override_with(cfg.epochs, o.epochs);
    override_with(cfg.learning_rate, o.lr);
    override_with(cfg.samples_per_epoch, o.samples);
    override_with(cfg.batch_size, o.batch);
    override_with(cfg.validation_samples, o.validation);
    if (o.loss) cfg.loss = loss_kind_from_string(*o.loss);
    if (o.measure) cfg.measure.kind = measure_kind_from_string(*o.measure);
    override_with(cfg.measure.ksg_k, o.k);
    override_with(cfg.var_mu, o.var_mu);
    if (o.var_nu) {
        cfg.var_nu = *o.var_nu;
    } else if (o.var_mu) {
        cfg.var_nu = *o.var_mu;
    }
    if (common.seed) cfg.seed = *common.seed;
    cfg.threads = common.threads;

    if (o.merge) arch.merge = merge_mode_from_string(*o.merge);
    if (o.table_bits) arch.grid.log2_table_size = *o.table_bits;
    if (o.layers) arch.encoder_layers = arch.decoder_layers = *o.layers;
    if (o.channels) arch.hidden_channels = *o.channels;
    if (o.grid_only) arch.encoder_layers = 0;
    if (o.unshared || cfg.var_mu != cfg.var_nu) arch.shared_encoder = false;
    cfg.validate();
    return {arch, cfg};
}

struct TrainOptions {
    Common common;
    TrainOverrides overrides;
    std::string ensemble, out, history;
};

int run_train(const TrainOptions& o) {
    const auto field = load_ensemble(o.ensemble);
    const auto [arch, cfg] = resolve_training(o.common, o.overrides);
    spdlog::info("training {}x{} on {} ({} epochs, lr {})", cfg.var_mu, cfg.var_nu, o.ensemble,
                 cfg.epochs, cfg.learning_rate);
    const auto artifact = train(field, arch, cfg, [](const EpochRecord& r) {
        spdlog::info("epoch {:3d}  train {:.5g}  val {:.5g}  psnr {:.2f} dB  lr {:.1e}  {:.1f}s",
                     r.epoch, r.train_loss, r.validation_loss, r.validation_psnr,
                     r.learning_rate, r.seconds);
    });
    save_model(artifact.model, o.out);
    if (!o.history.empty()) {
        std::ofstream h(o.history);
        h << "epoch,train_loss,validation_loss,validation_psnr,learning_rate,seconds\n";
        for (const auto& r : artifact.history) {
            h << r.epoch << ',' << r.train_loss << ',' << r.validation_loss << ','
              << r.validation_psnr << ',' << r.learning_rate << ',' << r.seconds << '\n';
        }
    }
    std::cout << json{{"model", o.out},
                      {"best_epoch", artifact.best_epoch},
                      {"psnr_db", artifact.best().validation_psnr},
                      {"validation_loss", artifact.best().validation_loss},
                      {"model_bytes", artifact.model.descriptor().model_bytes()},
                      {"seconds", artifact.seconds}}
                     .dump(2)
              << '\n';
    return 0;
}

struct SweepOptions {
    Common common;
    TrainOverrides overrides;
    std::string ensemble, out;
    std::vector<int> table_bits;
    std::vector<std::string> mlp;  // "LxC"
};

int run_sweep(const SweepOptions& o) {
    const auto field = load_ensemble(o.ensemble);
    const auto [arch, cfg] = resolve_training(o.common, o.overrides);
    const json sweep_cfg = section(o.common, "sweep");
    auto bits = sweep_cfg.value("table_bits", std::vector<int>{10, 12, 14, 16});
    if (!o.table_bits.empty()) bits = o.table_bits;
    std::vector<std::pair<int, int>> shapes;
    for (const auto& s : sweep_cfg.value("mlp", json::array())) {
        shapes.emplace_back(s.at(0).get<int>(), s.at(1).get<int>());
    }
    if (!o.mlp.empty()) {
        shapes.clear();
        for (const auto& s : o.mlp) {
            const auto x = s.find('x');
            if (x == std::string::npos) throw ConfigError("MLP shape '" + s + "' is not LxC");
            shapes.emplace_back(std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1)));
        }
    }
    if (shapes.empty()) shapes.emplace_back(arch.decoder_layers, arch.hidden_channels);

    const auto cells = sweep(field, arch, cfg, bits, shapes);
    if (o.out.empty()) {
        write_sweep_csv(cells, std::cout);
    } else {
        std::ofstream out(o.out);
        write_sweep_csv(cells, out);
        spdlog::info("wrote {} ({} cells)", o.out, cells.size());
    }
    const bool all_ok = std::all_of(cells.begin(), cells.end(),
                                    [](const SweepCell& c) { return c.error.empty(); });
    return all_ok ? 0 : 1;
}

// --- eval / bench / reconstruct -------------------------------------------

struct EvalOptions {
    Common common;
    std::string model, ensemble;
    std::size_t samples = 100000;
    bool on_grid = false;
    std::vector<double> ref;
    std::vector<std::uint32_t> dims;
};

int run_eval(const EvalOptions& o) {
    const auto model = load_model(o.model);
    const auto field = load_ensemble(o.ensemble);
    const auto& d = model.descriptor();
    TrainingConfig cfg;
    cfg.var_mu = d.var_mu;
    cfg.var_nu = d.var_nu;
    cfg.measure = d.measure;
    cfg.validation_samples = o.samples;
    cfg.validation_on_grid = o.on_grid;
    cfg.threads = o.common.threads;
    if (o.common.seed) cfg.seed = *o.common.seed;
    const auto e = evaluate(model, make_validation_set(field, cfg));
    json result{{"pairs", o.samples}, {"l1", e.l1}, {"mse", e.mse}, {"psnr_db", e.psnr_db}};
    if (!o.ref.empty()) {
        const auto& dom = field.domain();
        const GridDims dims = o.dims.empty() ? GridDims{dom.nx, dom.ny, dom.nz} : to_dims(o.dims);
        const auto c = compare_to_ground_truth(model, field, d.measure,
                                               {to_vec3(o.ref), ReferenceRole::Nu, dims},
                                               o.common.threads);
        result["field"] = {{"psnr_db", c.psnr_db}, {"max_abs_err", c.max_abs_err}};
    }
    std::cout << result.dump(2) << '\n';
    return 0;
}

struct BenchOptions {
    Common common;
    std::string model, ensemble, out;
    std::vector<std::uint32_t> dims{32, 32, 32};
    std::vector<double> ref{0, 0, 0};
    int repetitions = 3;
    int k = 3;
    bool no_ksg = false;
    bool no_pearson = false;
};

int run_bench(const BenchOptions& o) {
    const auto model = load_model(o.model);
    const auto field = load_ensemble(o.ensemble);
    BenchmarkOptions b;
    b.dims = to_dims(o.dims);
    b.reference = to_vec3(o.ref);
    b.repetitions = o.repetitions;
    b.ksg_k = o.k;
    b.include_ksg = !o.no_ksg;
    b.include_pearson = !o.no_pearson;
    b.threads = o.common.threads;
    const auto rows = benchmark(model, field, b);
    if (o.out.empty()) {
        write_benchmark_csv(rows, std::cout);
    } else {
        std::ofstream out(o.out);
        write_benchmark_csv(rows, out);
    }
    return 0;
}

struct ReconstructOptions {
    Common common;
    std::string model, out, role = "nu";
    std::vector<double> ref{0, 0, 0};
    std::vector<double> ref_b;
    std::vector<std::uint32_t> dims;
    std::size_t batch = kDefaultQueryBatch;
};

int run_reconstruct(const ReconstructOptions& o) {
    const auto model = load_model(o.model);
    const auto role = reference_role_from_string(o.role);
    const GridDims dims = to_dims(o.dims);
    const FieldGrid grid =
        o.ref_b.empty()
            ? reconstruct_field(model, {to_vec3(o.ref), role, dims, o.batch}, o.common.threads)
            : difference_field(model, to_vec3(o.ref), to_vec3(o.ref_b), dims, role, o.batch,
                               o.common.threads);
    save_field_grid(grid, o.out);
    spdlog::info("wrote {} ({} values)", o.out, grid.values.size());
    return 0;
}

// --- serve -----------------------------------------------------------------

struct ServeOptions {
    Common common;
    std::string host = "127.0.0.1";
    int port = 8080;
    std::vector<std::string> models;     // [id=]path
    std::vector<std::string> ensembles;  // [name=]path
    std::string static_dir;
};

std::pair<std::string, std::string> split_named(const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) return {std::filesystem::path(spec).stem().string(), spec};
    return {spec.substr(0, eq), spec.substr(eq + 1)};
}

int run_serve(const ServeOptions& o) {
    Service service({o.common.threads, o.static_dir});
    for (const auto& spec : o.models) {
        const auto [id, path] = split_named(spec);
        service.models().load(path, id);
        spdlog::info("model '{}' <- {}", id, path);
    }
    for (const auto& spec : o.ensembles) {
        const auto [name, path] = split_named(spec);
        service.add_ensemble(name, load_ensemble(path));
        spdlog::info("ensemble '{}' <- {}", name, path);
    }
    spdlog::info("listening on http://{}:{}", o.host, o.port);
    service.run(o.host, o.port);
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural dependence fields"};
    app.require_subcommand(1);

    GenOptions gen;
    auto* gen_cmd = app.add_subcommand("gen-synthetic", "Generate a synthetic Gaussian ensemble");
    add_common(gen_cmd, gen.common);
    gen_cmd->add_option("-o,--out", gen.out, "Output ensemble (.ndfe)")->required();
    add_triple(gen_cmd, "--dims", gen.dims, "Grid nodes X,Y,Z");
    gen_cmd->add_option("--members", gen.members);
    gen_cmd->add_option("--variables", gen.variables)->delimiter(',');
    gen_cmd->add_option("--kernel", gen.kernel)
        ->check(CLI::IsMember({"squared_exponential", "white_noise", "linear_mix"}));
    gen_cmd->add_option("--length-scale", gen.length_scale);
    gen_cmd->add_option("--mix", gen.mix);

    GroundTruthOptions gt;
    auto* gt_cmd = app.add_subcommand("ground-truth", "Estimator field for one reference point");
    add_common(gt_cmd, gt.common);
    gt_cmd->add_option("-e,--ensemble", gt.ensemble)->required()->check(CLI::ExistingFile);
    gt_cmd->add_option("-o,--out", gt.out, "Output field (.ndfg)")->required();
    gt_cmd->add_option("--measure", gt.measure)->check(CLI::IsMember({"pearson", "ksg_mi"}));
    gt_cmd->add_option("--k", gt.k);
    gt_cmd->add_option("--var-mu", gt.var_mu);
    gt_cmd->add_option("--var-nu", gt.var_nu);
    add_triple(gt_cmd, "--ref", gt.ref, "Reference point x,y,z in [-1,1]");
    add_triple(gt_cmd, "--dims", gt.dims, "Output grid X,Y,Z (default: ensemble grid)");

    TrainOptions tr;
    auto* tr_cmd = app.add_subcommand("train", "Train a model on an ensemble");
    add_common(tr_cmd, tr.common);
    tr_cmd->add_option("-e,--ensemble", tr.ensemble)->required()->check(CLI::ExistingFile);
    tr_cmd->add_option("-o,--out", tr.out, "Output model (.ndfm)")->required();
    tr_cmd->add_option("--history", tr.history, "Per-epoch CSV");
    tr.overrides.attach(tr_cmd);

    SweepOptions sw;
    auto* sw_cmd = app.add_subcommand("sweep", "Train over table sizes and MLP shapes");
    add_common(sw_cmd, sw.common);
    sw_cmd->add_option("-e,--ensemble", sw.ensemble)->required()->check(CLI::ExistingFile);
    sw_cmd->add_option("-o,--out", sw.out, "Output CSV (default: stdout)");
    sw_cmd->add_option("--bits", sw.table_bits, "log2 table sizes")->delimiter(',');
    sw_cmd->add_option("--mlp", sw.mlp, "MLP shapes as LxC")->delimiter(',');
    sw.overrides.attach(sw_cmd);

    EvalOptions ev;
    auto* ev_cmd = app.add_subcommand("eval", "PSNR of a model on fresh validation pairs");
    add_common(ev_cmd, ev.common);
    ev_cmd->add_option("-m,--model", ev.model)->required()->check(CLI::ExistingFile);
    ev_cmd->add_option("-e,--ensemble", ev.ensemble)->required()->check(CLI::ExistingFile);
    ev_cmd->add_option("--samples", ev.samples, "Validation pairs");
    ev_cmd->add_flag("--on-grid", ev.on_grid, "Snap pairs to ensemble nodes");
    add_triple(ev_cmd, "--ref", ev.ref, "Also compare the field for this reference");
    add_triple(ev_cmd, "--dims", ev.dims, "Comparison grid X,Y,Z");

    BenchOptions be;
    auto* be_cmd = app.add_subcommand("bench", "Time reconstruction against direct estimators");
    add_common(be_cmd, be.common);
    be_cmd->add_option("-m,--model", be.model)->required()->check(CLI::ExistingFile);
    be_cmd->add_option("-e,--ensemble", be.ensemble)->required()->check(CLI::ExistingFile);
    be_cmd->add_option("-o,--out", be.out, "Output CSV (default: stdout)");
    add_triple(be_cmd, "--dims", be.dims, "Grid X,Y,Z");
    add_triple(be_cmd, "--ref", be.ref, "Reference point");
    be_cmd->add_option("--repetitions", be.repetitions);
    be_cmd->add_option("--k", be.k);
    be_cmd->add_flag("--no-ksg", be.no_ksg);
    be_cmd->add_flag("--no-pearson", be.no_pearson);

    ReconstructOptions rc;
    auto* rc_cmd = app.add_subcommand("reconstruct", "Dense field for a reference point");
    add_common(rc_cmd, rc.common);
    rc_cmd->add_option("-m,--model", rc.model)->required()->check(CLI::ExistingFile);
    rc_cmd->add_option("-o,--out", rc.out, "Output field (.ndfg)")->required();
    add_triple(rc_cmd, "--ref", rc.ref, "Reference point");
    add_triple(rc_cmd, "--ref-b", rc.ref_b, "Second reference: write ref minus ref-b");
    add_triple(rc_cmd, "--dims", rc.dims, "Grid X,Y,Z")->required();
    rc_cmd->add_option("--role", rc.role)->check(CLI::IsMember({"mu", "nu"}));
    rc_cmd->add_option("--batch", rc.batch, "Query batch size");

    ServeOptions sv;
    auto* sv_cmd = app.add_subcommand("serve", "Run the HTTP service");
    add_common(sv_cmd, sv.common);
    sv_cmd->add_option("--host", sv.host);
    sv_cmd->add_option("--port", sv.port);
    sv_cmd->add_option("--model", sv.models, "[id=]path, repeatable");
    sv_cmd->add_option("--ensemble", sv.ensembles, "[name=]path, repeatable");
    sv_cmd->add_option("--static", sv.static_dir, "Directory served at /");

    CLI11_PARSE(app, argc, argv);

    const Common* common = nullptr;
    for (auto [cmd, c] : std::array<std::pair<CLI::App*, const Common*>, 8>{
             {{gen_cmd, &gen.common}, {gt_cmd, &gt.common}, {tr_cmd, &tr.common},
              {sw_cmd, &sw.common}, {ev_cmd, &ev.common}, {be_cmd, &be.common},
              {rc_cmd, &rc.common}, {sv_cmd, &sv.common}}}) {
        if (cmd->parsed()) common = c;
    }
    spdlog::set_level(common && common->verbose ? spdlog::level::debug : spdlog::level::info);

    try {
        if (gen_cmd->parsed()) return run_gen(gen);
        if (gt_cmd->parsed()) return run_ground_truth(gt);
        if (tr_cmd->parsed()) return run_train(tr);
        if (sw_cmd->parsed()) return run_sweep(sw);
        if (ev_cmd->parsed()) return run_eval(ev);
        if (be_cmd->parsed()) return run_bench(be);
        if (rc_cmd->parsed()) return run_reconstruct(rc);
        if (sv_cmd->parsed()) return run_serve(sv);
    } catch (const std::exception& e) {
        spdlog::error("{}", e.what());
        return 1;
    }
    return 0;
}
