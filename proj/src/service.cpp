#include "ndf/service.hpp"

#include <algorithm>
#include <cstring>
#include <map>
#include <shared_mutex>
#include <thread>

#include <httplib.h>
#include <json.hpp>
#include <spdlog/spdlog.h>

#include "ndf/error.hpp"

namespace ndf {

namespace {

using nlohmann::json;

constexpr const char* kBoundary = "ndf-field-boundary";

Vec3 parse_point(const json& j, const char* key) {
    if (!j.contains(key)) throw ParameterError(std::string("missing '") + key + "'");
    const auto& v = j.at(key);
    if (!v.is_array() || v.size() != 3) {
        throw ParameterError(std::string("'") + key + "' must be [x, y, z]");
    }
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

std::string dims_header(const GridDims& d) {
    return std::to_string(d.x) + "," + std::to_string(d.y) + "," + std::to_string(d.z);
}

std::string to_bytes(const FieldGrid& f) {
    std::string out(f.values.size() * sizeof(float), '\0');
    std::memcpy(out.data(), f.values.data(), out.size());
    return out;
}

std::pair<float, float> value_range(const FieldGrid& f) {
    if (f.values.empty()) return {0.0f, 0.0f};
    const auto [lo, hi] = std::minmax_element(f.values.begin(), f.values.end());
    return {*lo, *hi};
}

void clamp_unit(FieldGrid& f) {
    for (float& v : f.values) v = std::clamp(v, -1.0f, 1.0f);
}

void send_field(httplib::Response& res, const FieldGrid& f) {
    const auto [lo, hi] = value_range(f);
    res.set_header("X-Dims", dims_header(f.dims));
    res.set_header("X-Value-Min", std::to_string(lo));
    res.set_header("X-Value-Max", std::to_string(hi));
    res.set_content(to_bytes(f), "application/octet-stream");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    res.status = status;
    res.set_content(json{{"error", message}}.dump(), "application/json");
}

CorrelationMeasure parse_measure(const json& body, const CorrelationMeasure& fallback) {
    CorrelationMeasure m = fallback;
    if (body.contains("measure")) m.kind = measure_kind_from_string(body.at("measure"));
    m.ksg_k = body.value("k", m.ksg_k);
    if (m.ksg_k < 1) throw ParameterError("k must be >= 1");
    return m;
}

} // namespace

struct Service::Impl {
    ServiceOptions options;
    ModelRegistry registry;
    mutable std::shared_mutex ensemble_mutex;
    std::map<std::string, std::shared_ptr<const EnsembleField>> ensembles;
    httplib::Server server;
    std::thread worker;

    explicit Impl(ServiceOptions o) : options(std::move(o)) { install_routes(); }

    std::shared_ptr<const EnsembleField> ensemble(const std::string& name) const {
        std::shared_lock lock(ensemble_mutex);
        if (ensembles.empty()) throw NotFoundError("no ensemble is loaded");
        const auto it = ensembles.find(name);
        if (it == ensembles.end()) throw NotFoundError("unknown ensemble '" + name + "'");
        return it->second;
    }

    /// Explicit dims, or the native grid of a loaded ensemble holding `vars`.
    GridDims resolve_dims(const json& body, const std::vector<std::string>& vars) const {
        if (body.contains("dims")) {
            const auto& d = body.at("dims");
            if (!d.is_array() || d.size() != 3) throw ParameterError("'dims' must be [X, Y, Z]");
            GridDims g{d[0].get<std::uint32_t>(), d[1].get<std::uint32_t>(),
                       d[2].get<std::uint32_t>()};
            if (g.x == 0 || g.y == 0 || g.z == 0) throw ParameterError("dims must be >= 1");
            return g;
        }
        std::shared_lock lock(ensemble_mutex);
        for (const auto& [name, field] : ensembles) {
            const auto& names = field->variables();
            const bool has_all = std::all_of(vars.begin(), vars.end(), [&](const std::string& v) {
                return std::find(names.begin(), names.end(), v) != names.end();
            });
            if (has_all) {
                const auto& dom = field->domain();
                return {dom.nx, dom.ny, dom.nz};
            }
        }
        throw ParameterError("'dims' is required when no matching ensemble is loaded");
    }

    template <typename Fn>
    httplib::Server::Handler guarded(Fn fn) {
        return [fn](const httplib::Request& req, httplib::Response& res) {
            try {
                const json body = req.body.empty() ? json::object() : json::parse(req.body);
                fn(body, res);
            } catch (const json::exception& e) {
                send_error(res, 400, std::string("bad request: ") + e.what());
            } catch (const NotFoundError& e) {
                send_error(res, 404, e.what());
            } catch (const LookupError& e) {
                send_error(res, 404, e.what());
            } catch (const ParameterError& e) {
                send_error(res, 400, e.what());
            } catch (const ConfigError& e) {
                send_error(res, 400, e.what());
            } catch (const ShapeError& e) {
                send_error(res, 400, e.what());
            } catch (const FormatError& e) {
                send_error(res, 422, e.what());
            } catch (const CorruptFileError& e) {
                send_error(res, 422, e.what());
            } catch (const ModelCorruptError& e) {
                send_error(res, 422, e.what());
            } catch (const std::exception& e) {
                spdlog::error("request {} failed: {}", req.path, e.what());
                send_error(res, 500, e.what());
            }
        };
    }

    void install_routes() {
        server.Get("/api/health", [](const httplib::Request&, httplib::Response& res) {
            res.set_content(R"({"status":"ok"})", "application/json");
        });

        server.Get("/api/models", guarded([this](const json&, httplib::Response& res) {
            json list = json::array();
            for (const auto& [id, model] : registry.list()) {
                const auto& d = model->descriptor();
                list.push_back({{"id", id},
                                {"variables", {d.var_mu, d.var_nu}},
                                {"measure", to_string(d.measure.kind)},
                                {"merge", to_string(d.merge)},
                                {"shared", d.shared_encoder},
                                {"bytes", d.model_bytes()}});
            }
            res.set_content(list.dump(), "application/json");
        }));

        server.Post("/api/models/load", guarded([this](const json& body, httplib::Response& res) {
            const std::string path = body.at("path").get<std::string>();
            const std::string id = registry.load(path, body.value("id", std::string{}));
            res.set_content(json{{"id", id}}.dump(), "application/json");
        }));

        server.Post("/api/reconstruct", guarded([this](const json& body, httplib::Response& res) {
            const auto model = registry.get(body.at("model").get<std::string>());
            const auto& d = model->descriptor();
            ReconstructRequest r;
            r.reference = parse_point(body, "ref");
            r.role = reference_role_from_string(body.value("role", std::string("nu")));
            r.dims = resolve_dims(body, {d.var_mu, d.var_nu});
            r.batch_size = body.value("batch", kDefaultQueryBatch);
            FieldGrid f = reconstruct_field(*model, r, options.threads);
            if (body.value("clamp", true) && d.measure.kind == CorrelationMeasure::Kind::Pearson) {
                clamp_unit(f);
            }
            send_field(res, f);
        }));

        server.Post("/api/diff", guarded([this](const json& body, httplib::Response& res) {
            const auto model = registry.get(body.at("model").get<std::string>());
            const auto& d = model->descriptor();
            const auto role = reference_role_from_string(body.value("role", std::string("nu")));
            const FieldGrid f = difference_field(
                *model, parse_point(body, "ref_a"), parse_point(body, "ref_b"),
                resolve_dims(body, {d.var_mu, d.var_nu}), role,
                body.value("batch", kDefaultQueryBatch), options.threads);
            send_field(res, f);
        }));

        server.Post("/api/matrix", guarded([this](const json& body, httplib::Response& res) {
            std::vector<ModelRegistry::Handle> handles;
            std::vector<const NdfModel<float>*> models;
            for (const auto& id : body.at("models")) {
                handles.push_back(registry.get(id.get<std::string>()));
                models.push_back(handles.back().get());
            }
            const auto variables = body.at("variables").get<std::vector<std::string>>();
            const GridDims dims = resolve_dims(body, variables);
            auto cells = matrix_reconstruct(models, variables, parse_point(body, "ref"), dims,
                                            body.value("batch", kDefaultQueryBatch),
                                            options.threads);
            const bool clamp = body.value("clamp", true);
            const std::size_t n = variables.size();
            std::string out;
            for (std::size_t c = 0; c < cells.size(); ++c) {
                if (clamp && models.front()->descriptor().measure.kind ==
                                 CorrelationMeasure::Kind::Pearson) {
                    clamp_unit(cells[c]);
                }
                const auto [lo, hi] = value_range(cells[c]);
                out += std::string("--") + kBoundary + "\r\n";
                out += "Content-Type: application/octet-stream\r\n";
                out += "X-Cell: " + std::to_string(c / n) + "," + std::to_string(c % n) + "\r\n";
                out += "X-Variables: " + variables[c / n] + "," + variables[c % n] + "\r\n";
                out += "X-Dims: " + dims_header(cells[c].dims) + "\r\n";
                out += "X-Value-Min: " + std::to_string(lo) + "\r\n";
                out += "X-Value-Max: " + std::to_string(hi) + "\r\n\r\n";
                out += to_bytes(cells[c]);
                out += "\r\n";
            }
            out += std::string("--") + kBoundary + "--\r\n";
            res.set_header("X-Cells", std::to_string(cells.size()));
            res.set_content(out, std::string("multipart/mixed; boundary=") + kBoundary);
        }));

        server.Post("/api/ground_truth", guarded([this](const json& body, httplib::Response& res) {
            const auto field = ensemble(body.at("ensemble").get<std::string>());
            const std::string var_mu = body.at("var_mu").get<std::string>();
            const std::string var_nu = body.value("var_nu", var_mu);
            const std::size_t mu = field->variable_index(var_mu);
            const std::size_t nu = field->variable_index(var_nu);
            const auto measure = parse_measure(body, CorrelationMeasure{});
            const FieldGrid f =
                ground_truth_field(*field, measure, mu, nu, parse_point(body, "ref"),
                                   resolve_dims(body, {var_mu, var_nu}), options.threads);
            send_field(res, f);
        }));

        server.Post("/api/compare", guarded([this](const json& body, httplib::Response& res) {
            const auto model = registry.get(body.at("model").get<std::string>());
            const auto field = ensemble(body.at("ensemble").get<std::string>());
            const auto& d = model->descriptor();
            const auto measure = parse_measure(body, d.measure);
            ReconstructRequest r;
            r.reference = parse_point(body, "ref");
            r.role = reference_role_from_string(body.value("role", std::string("nu")));
            r.dims = resolve_dims(body, {d.var_mu, d.var_nu});
            const Comparison c = compare_to_ground_truth(*model, *field, measure, r, options.threads);
            res.set_content(json{{"psnr_db", c.psnr_db}, {"max_abs_err", c.max_abs_err}}.dump(),
                            "application/json");
        }));

        if (!options.static_dir.empty()) {
            if (!server.set_mount_point("/", options.static_dir.string())) {
                throw NotFoundError("static directory '" + options.static_dir.string() +
                                    "' does not exist");
            }
        }
    }
};

Service::Service(ServiceOptions options) : impl_(std::make_unique<Impl>(std::move(options))) {}

Service::~Service() { stop(); }

ModelRegistry& Service::models() { return impl_->registry; }

void Service::add_ensemble(const std::string& name, EnsembleField field) {
    auto handle = std::make_shared<const EnsembleField>(std::move(field));
    std::unique_lock lock(impl_->ensemble_mutex);
    impl_->ensembles[name] = std::move(handle);
}

int Service::start(const std::string& host, int port) {
    int bound = port;
    if (port == 0) {
        bound = impl_->server.bind_to_any_port(host);
    } else if (!impl_->server.bind_to_port(host, port)) {
        bound = -1;
    }
    if (bound < 0) throw Error("cannot bind " + host + ":" + std::to_string(port));
    impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
    impl_->server.wait_until_ready();
    return bound;
}

void Service::run(const std::string& host, int port) {
    if (!impl_->server.listen(host, port)) {
        throw Error("cannot listen on " + host + ":" + std::to_string(port));
    }
}

void Service::stop() {
    if (!impl_) return;
    impl_->server.stop();
    if (impl_->worker.joinable()) impl_->worker.join();
}

} // namespace ndf
