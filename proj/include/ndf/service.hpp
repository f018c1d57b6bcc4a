#pragma once

// HTTP front end: JSON control plane, float32 little-endian data plane.
//
//   GET  /api/models          registered models
//   POST /api/models/load     {path, id?} -> {id}
//   POST /api/reconstruct     {model, ref, role, dims, clamp, batch} -> X*Y*Z float32
//   POST /api/diff            {model, ref_a, ref_b, role, dims} -> X*Y*Z float32
//   POST /api/matrix          {models, variables, ref, dims, clamp} -> multipart/mixed
//   POST /api/ground_truth    {ensemble, measure, k, var_mu, var_nu, ref, dims} -> float32
//   POST /api/compare         {model, ensemble, measure, k, ref, role, dims} -> {psnr_db, max_abs_err}
//
// Binary responses carry X-Dims ("X,Y,Z"), X-Value-Min and X-Value-Max headers.

#include <filesystem>
#include <memory>
#include <string>

#include "ndf/ensemble.hpp"
#include "ndf/reconstruction.hpp"

namespace ndf {

struct ServiceOptions {
    unsigned threads = 0;           // per-request reconstruction workers
    std::filesystem::path static_dir;  // optional static assets mounted at /
};

class Service {
public:
    explicit Service(ServiceOptions options = {});
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    ModelRegistry& models();
    /// Makes an ensemble available to ground-truth and comparison requests.
    void add_ensemble(const std::string& name, EnsembleField field);

    /// Binds and serves on a background thread; port 0 picks a free port.
    /// Returns the bound port. Throws Error when binding fails.
    int start(const std::string& host = "127.0.0.1", int port = 0);
    /// Blocks serving on the calling thread.
    void run(const std::string& host, int port);
    void stop();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

} // namespace ndf
