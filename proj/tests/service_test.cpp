#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "ndf/error.hpp"
#include "ndf/service.hpp"
#include "test_support.hpp"

using namespace ndf;
using nlohmann::json;

namespace {

std::vector<float> floats(const std::string& body) {
    std::vector<float> out(body.size() / sizeof(float));
    std::memcpy(out.data(), body.data(), out.size() * sizeof(float));
    return out;
}

NdfModel<float> make_model(const std::string& mu, const std::string& nu, std::uint64_t seed) {
    auto d = ndf::testing::tiny_descriptor(MergeMode::Multiply, mu == nu);
    d.var_mu = mu;
    d.var_nu = nu;
    NdfModel<float> m(d);
    m.initialize(seed, 0.1);
    return m;
}

struct Part {
    std::map<std::string, std::string> headers;
    std::string body;
};

std::vector<Part> parse_multipart(const std::string& body, const std::string& boundary) {
    std::vector<Part> parts;
    const std::string delim = "--" + boundary;
    std::size_t pos = body.find(delim);
    while (pos != std::string::npos) {
        pos += delim.size();
        if (body.compare(pos, 2, "--") == 0) break;
        pos += 2;  // CRLF
        Part part;
        for (;;) {
            const std::size_t eol = body.find("\r\n", pos);
            if (eol == pos) {
                pos += 2;
                break;
            }
            const std::string line = body.substr(pos, eol - pos);
            const auto colon = line.find(": ");
            part.headers[line.substr(0, colon)] = line.substr(colon + 2);
            pos = eol + 2;
        }
        const std::size_t next = body.find("\r\n" + delim, pos);
        part.body = body.substr(pos, next - pos);
        parts.push_back(std::move(part));
        pos = next + 2;
    }
    return parts;
}

class ServiceTest : public ::testing::Test {
protected:
    void SetUp() override {
        service_.add_ensemble("synthetic", field_);
        service_.models().add(make_model("v0", "v0", 1), "a");
        service_.models().add(make_model("v0", "v1", 2), "b");
        service_.models().add(make_model("v1", "v1", 3), "c");
        port_ = service_.start();
        client_ = std::make_unique<httplib::Client>("127.0.0.1", port_);
    }

    httplib::Result post(const std::string& path, const json& body) {
        return client_->Post(path, body.dump(), "application/json");
    }

    EnsembleField field_ = generate_synthetic(GridDomain{6, 5, 4}, 24, {"v0", "v1"},
                                              CovarianceKernel{CovarianceKernel::Kind::LinearMix}, 7);
    Service service_;
    int port_ = 0;
    std::unique_ptr<httplib::Client> client_;
};

} // namespace

TEST_F(ServiceTest, HealthAndModelList) {
    auto health = client_->Get("/api/health");
    ASSERT_TRUE(health);
    EXPECT_EQ(health->status, 200);

    auto res = client_->Get("/api/models");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    const auto list = json::parse(res->body);
    ASSERT_EQ(list.size(), 3u);
    EXPECT_EQ(list[1]["id"], "b");
    EXPECT_EQ(list[1]["variables"], json({"v0", "v1"}));
    EXPECT_EQ(list[1]["measure"], "pearson");
    EXPECT_EQ(list[1]["merge"], "multiply");
    EXPECT_EQ(list[1]["shared"], false);
    EXPECT_EQ(list[1]["bytes"], service_.models().get("b")->descriptor().model_bytes());
}

TEST_F(ServiceTest, LoadModelFromFile) {
    const auto path = std::filesystem::temp_directory_path() / "ndf_service_load.ndfm";
    save_model(make_model("v0", "v0", 11), path);
    auto res = post("/api/models/load", {{"path", path.string()}, {"id", "loaded"}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 200);
    EXPECT_EQ(json::parse(res->body)["id"], "loaded");
    EXPECT_EQ(service_.models().size(), 4u);

    res = post("/api/models/load", {{"path", path.string()}});
    ASSERT_TRUE(res);
    EXPECT_FALSE(json::parse(res->body)["id"].get<std::string>().empty());

    res = post("/api/models/load", {{"path", "/nonexistent/model.ndfm"}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);

    {
        std::ofstream out(path, std::ios::binary);
        out << "not a model";
    }
    res = post("/api/models/load", {{"path", path.string()}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 422);
    EXPECT_TRUE(json::parse(res->body).contains("error"));
    std::filesystem::remove(path);
}

TEST_F(ServiceTest, ReconstructMatchesLibrary) {
    for (const std::string role : {"nu", "mu"}) {
        auto res = post("/api/reconstruct", {{"model", "b"},
                                             {"ref", {0.1, -0.2, 0.3}},
                                             {"role", role},
                                             {"dims", {7, 5, 3}},
                                             {"clamp", false}});
        ASSERT_TRUE(res);
        ASSERT_EQ(res->status, 200) << res->body;
        EXPECT_EQ(res->get_header_value("Content-Type"), "application/octet-stream");
        EXPECT_EQ(res->get_header_value("X-Dims"), "7,5,3");
        const auto values = floats(res->body);
        ASSERT_EQ(res->body.size(), 7u * 5 * 3 * sizeof(float));

        const auto expected = reconstruct_field(
            *service_.models().get("b"),
            {{0.1, -0.2, 0.3}, reference_role_from_string(role), GridDims{7, 5, 3}});
        EXPECT_EQ(values, expected.values) << role;
        const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
        EXPECT_FLOAT_EQ(std::stof(res->get_header_value("X-Value-Min")), *lo);
        EXPECT_FLOAT_EQ(std::stof(res->get_header_value("X-Value-Max")), *hi);
    }
}

TEST_F(ServiceTest, ReconstructDefaultsToEnsembleResolution) {
    auto res = post("/api/reconstruct", {{"model", "a"}, {"ref", {0, 0, 0}}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(res->get_header_value("X-Dims"), "6,5,4");
    EXPECT_EQ(res->body.size(), 6u * 5 * 4 * sizeof(float));
}

TEST_F(ServiceTest, ReconstructWithoutEnsembleNeedsDims) {
    Service bare;
    bare.models().add(make_model("v0", "v0", 1), "a");
    httplib::Client cli("127.0.0.1", bare.start());
    auto res = cli.Post("/api/reconstruct", json{{"model", "a"}, {"ref", {0, 0, 0}}}.dump(),
                        "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 400);

    res = cli.Post("/api/ground_truth",
                   json{{"ensemble", "x"}, {"var_mu", "v0"}, {"ref", {0, 0, 0}}}.dump(),
                   "application/json");
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    bare.stop();
}

TEST_F(ServiceTest, ClampAppliesToPearsonOnly) {
    auto make_constant = [](CorrelationMeasure::Kind kind) {
        auto d = ndf::testing::tiny_descriptor(MergeMode::Multiply, true);
        d.measure.kind = kind;
        NdfModel<float> m(d);
        m.decoder_mut().layers().back().bias[0] = 5.0f;
        return m;
    };
    service_.models().add(make_constant(CorrelationMeasure::Kind::Pearson), "pearson5");
    service_.models().add(make_constant(CorrelationMeasure::Kind::KsgMi), "mi5");
    const json base{{"ref", {0, 0, 0}}, {"dims", {2, 2, 2}}};

    auto query = [&](const std::string& model, std::optional<bool> clamp) {
        json body = base;
        body["model"] = model;
        if (clamp) body["clamp"] = *clamp;
        auto res = post("/api/reconstruct", body);
        EXPECT_EQ(res->status, 200);
        return floats(res->body);
    };
    for (float v : query("pearson5", std::nullopt)) EXPECT_EQ(v, 1.0f);
    for (float v : query("pearson5", false)) EXPECT_EQ(v, 5.0f);
    for (float v : query("mi5", true)) EXPECT_EQ(v, 5.0f);
}

TEST_F(ServiceTest, DifferenceIsExactAndAntisymmetric) {
    const json ab{{"model", "a"},
                  {"ref_a", {0.5, 0.1, -0.4}},
                  {"ref_b", {-0.3, 0.2, 0.9}},
                  {"dims", {5, 5, 5}}};
    json ba = ab;
    std::swap(ba["ref_a"], ba["ref_b"]);
    json same = ab;
    same["ref_b"] = same["ref_a"];

    auto r1 = post("/api/diff", ab);
    auto r2 = post("/api/diff", ba);
    auto r3 = post("/api/diff", same);
    ASSERT_TRUE(r1 && r2 && r3);
    ASSERT_EQ(r1->status, 200) << r1->body;
    const auto d1 = floats(r1->body), d2 = floats(r2->body), d3 = floats(r3->body);
    const auto expected = difference_field(*service_.models().get("a"), {0.5, 0.1, -0.4},
                                           {-0.3, 0.2, 0.9}, GridDims{5, 5, 5});
    EXPECT_EQ(d1, expected.values);
    for (std::size_t i = 0; i < d1.size(); ++i) {
        EXPECT_EQ(d1[i], -d2[i]);
        EXPECT_EQ(d3[i], 0.0f);
    }
}

TEST_F(ServiceTest, MatrixReturnsOneCellPerVariablePair) {
    auto res = post("/api/matrix", {{"models", {"a", "b", "c"}},
                                    {"variables", {"v0", "v1"}},
                                    {"ref", {0.2, 0.2, -0.1}},
                                    {"dims", {4, 3, 2}},
                                    {"clamp", false}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const std::string type = res->get_header_value("Content-Type");
    const std::string key = "boundary=";
    ASSERT_NE(type.find("multipart/mixed"), std::string::npos);
    const auto parts = parse_multipart(res->body, type.substr(type.find(key) + key.size()));
    ASSERT_EQ(parts.size(), 4u);

    std::vector<const NdfModel<float>*> models;
    std::vector<ModelRegistry::Handle> handles;
    for (const char* id : {"a", "b", "c"}) {
        handles.push_back(service_.models().get(id));
        models.push_back(handles.back().get());
    }
    const auto cells =
        matrix_reconstruct(models, {"v0", "v1"}, {0.2, 0.2, -0.1}, GridDims{4, 3, 2});
    const char* expected_cells[] = {"0,0", "0,1", "1,0", "1,1"};
    for (std::size_t c = 0; c < 4; ++c) {
        EXPECT_EQ(parts[c].headers.at("X-Cell"), expected_cells[c]);
        EXPECT_EQ(parts[c].headers.at("X-Dims"), "4,3,2");
        EXPECT_EQ(floats(parts[c].body), cells[c].values) << c;
    }
    EXPECT_EQ(parts[1].headers.at("X-Variables"), "v0,v1");

    res = post("/api/matrix", {{"models", {"a", "c"}},
                               {"variables", {"v0", "v1"}},
                               {"ref", {0, 0, 0}},
                               {"dims", {2, 2, 2}}});
    ASSERT_TRUE(res);
    EXPECT_EQ(res->status, 404);
    EXPECT_NE(json::parse(res->body)["error"].get<std::string>().find("(v0, v1)"),
              std::string::npos);
}

TEST_F(ServiceTest, GroundTruthMatchesEstimator) {
    const Vec3 ref{0.3, -0.5, 0.0};
    auto res = post("/api/ground_truth",
                    {{"ensemble", "synthetic"}, {"var_mu", "v0"}, {"var_nu", "v1"},
                     {"ref", {ref[0], ref[1], ref[2]}}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    EXPECT_EQ(res->get_header_value("X-Dims"), "6,5,4");
    const auto pearson =
        ground_truth_field(field_, CorrelationMeasure{}, 0, 1, ref, GridDims{6, 5, 4});
    EXPECT_EQ(floats(res->body), pearson.values);

    res = post("/api/ground_truth", {{"ensemble", "synthetic"},
                                     {"var_mu", "v0"},
                                     {"measure", "ksg_mi"},
                                     {"k", 4},
                                     {"ref", {ref[0], ref[1], ref[2]}},
                                     {"dims", {3, 3, 3}}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto mi = ground_truth_field(
        field_, CorrelationMeasure{CorrelationMeasure::Kind::KsgMi, 4}, 0, 0, ref, GridDims{3, 3, 3});
    EXPECT_EQ(floats(res->body), mi.values);

    res = post("/api/ground_truth", {{"ensemble", "other"}, {"var_mu", "v0"}, {"ref", {0, 0, 0}}});
    EXPECT_EQ(res->status, 404);
    res = post("/api/ground_truth",
               {{"ensemble", "synthetic"}, {"var_mu", "zz"}, {"ref", {0, 0, 0}}});
    EXPECT_EQ(res->status, 404);
}

TEST_F(ServiceTest, CompareReportsPsnr) {
    auto res = post("/api/compare", {{"model", "b"},
                                     {"ensemble", "synthetic"},
                                     {"ref", {0.0, 0.1, 0.2}},
                                     {"dims", {4, 4, 4}}});
    ASSERT_TRUE(res);
    ASSERT_EQ(res->status, 200) << res->body;
    const auto body = json::parse(res->body);
    const auto expected =
        compare_to_ground_truth(*service_.models().get("b"), field_, CorrelationMeasure{},
                                {{0.0, 0.1, 0.2}, ReferenceRole::Nu, GridDims{4, 4, 4}});
    EXPECT_DOUBLE_EQ(body["psnr_db"].get<double>(), expected.psnr_db);
    EXPECT_DOUBLE_EQ(body["max_abs_err"].get<double>(), expected.max_abs_err);
}

TEST_F(ServiceTest, ErrorsMapToStatusCodes) {
    auto res = post("/api/reconstruct", {{"model", "missing"}, {"ref", {0, 0, 0}}});
    EXPECT_EQ(res->status, 404);
    EXPECT_TRUE(json::parse(res->body).contains("error"));

    res = client_->Post("/api/reconstruct", "{not json", "application/json");
    EXPECT_EQ(res->status, 400);

    res = post("/api/reconstruct", {{"model", "a"}, {"ref", {0, 0}}});
    EXPECT_EQ(res->status, 400);
    res = post("/api/reconstruct", {{"model", "a"}, {"ref", {0, 0, 0}}, {"role", "sideways"}});
    EXPECT_EQ(res->status, 400);
    res = post("/api/reconstruct", {{"model", "a"}, {"ref", {0, 0, 0}}, {"dims", {0, 2, 2}}});
    EXPECT_EQ(res->status, 400);
    res = post("/api/reconstruct", {{"ref", {0, 0, 0}}});
    EXPECT_EQ(res->status, 400);
}

TEST_F(ServiceTest, ConcurrentRequestsAgree) {
    const json body{{"model", "b"}, {"ref", {0.1, 0.1, 0.1}}, {"dims", {8, 8, 8}}};
    const auto reference = post("/api/reconstruct", body)->body;
    std::vector<std::thread> workers;
    std::atomic<int> mismatches{0};
    for (int t = 0; t < 6; ++t) {
        workers.emplace_back([&] {
            httplib::Client cli("127.0.0.1", port_);
            for (int i = 0; i < 5; ++i) {
                auto res = cli.Post("/api/reconstruct", body.dump(), "application/json");
                if (!res || res->body != reference) ++mismatches;
            }
        });
    }
    for (auto& w : workers) w.join();
    EXPECT_EQ(mismatches.load(), 0);
}
