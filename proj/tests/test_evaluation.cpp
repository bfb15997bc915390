#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "oracle_helpers.hpp"
#include "svll/dataset.hpp"
#include "svll/evaluation.hpp"

using svll::EvalReport;
using svll::Matrix;
using svll::Rng;

namespace {

Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols) {
    Matrix m(rows, std::vector<double>(cols));
    for (auto& row : m)
        for (double& v : row) v = rng.normal();
    return m;
}

std::vector<int> random_ints(Rng& rng, std::size_t n, int lo, int hi) {
    std::vector<int> v(n);
    for (int& x : v) x = lo + static_cast<int>(rng.index(static_cast<std::size_t>(hi - lo)));
    return v;
}

double dist2(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    return std::hypot(a[0] - b[0], a[1] - b[1]);
}

}  // namespace

TEST_CASE("pairwise distances match an explicit double loop") {
    Rng rng(31);
    const Matrix q = random_matrix(rng, 7, 5);
    const Matrix g = random_matrix(rng, 9, 5);
    const Matrix d = svll::pairwise_distances(q, g);
    REQUIRE(d.size() == 7);
    for (std::size_t i = 0; i < q.size(); ++i)
        for (std::size_t j = 0; j < g.size(); ++j) {
            double acc = 0;
            for (std::size_t k = 0; k < 5; ++k) acc += (q[i][k] - g[j][k]) * (q[i][k] - g[j][k]);
            CHECK(d[i][j] == doctest::Approx(std::sqrt(acc)).epsilon(1e-12));
        }
    CHECK_THROWS_AS(svll::pairwise_distances(q, random_matrix(rng, 3, 4)), std::invalid_argument);
    CHECK_THROWS_AS(svll::pairwise_distances(Matrix{}, g), std::invalid_argument);
}

TEST_CASE("average precision of the match pattern 1,0,1 is 5/6") {
    const Matrix dist = {{0.1, 0.2, 0.3}};
    const EvalReport r = svll::evaluate(dist, {0}, {0}, {0, 1, 0}, {1, 1, 1});
    REQUIRE(r.valid_queries == 1);
    CHECK(r.per_query_ap[0] == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(r.mean_ap == doctest::Approx(5.0 / 6.0).epsilon(1e-15));
    CHECK(r.cmc[0] == 1.0);
}

TEST_CASE("report matches the exhaustive oracle on random instances") {
    Rng rng(404);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t nq = 50, ng = 200, dim = 16;
        const auto qe = oracle::random_unit_rows(rng, nq, dim);
        const auto ge = oracle::random_unit_rows(rng, ng, dim);
        const std::vector<int> q_ids = random_ints(rng, nq, 0, 10);
        const std::vector<int> q_cams = random_ints(rng, nq, 0, 3);
        const std::vector<int> g_ids = random_ints(rng, ng, 0, 10);
        const std::vector<int> g_cams = random_ints(rng, ng, 0, 3);
        const Matrix dist = svll::pairwise_distances(qe, ge);

        const EvalReport got = svll::evaluate(dist, q_ids, q_cams, g_ids, g_cams, 10);
        const oracle::RankingTruth want =
            oracle::ranking_naive(dist, q_ids, q_cams, g_ids, g_cams, 10);
        CHECK(std::abs(got.mean_ap - want.mean_ap) <= 1e-10);
        CHECK(got.valid_queries == static_cast<std::size_t>(want.valid_queries));
        CHECK(got.skipped_queries == nq - got.valid_queries);
        CHECK(got.per_query_ap.size() == got.valid_queries);
        REQUIRE(got.cmc.size() == 10);
        for (std::size_t r = 0; r < 10; ++r) CHECK(std::abs(got.cmc[r] - want.cmc[r]) <= 1e-10);
    }
}

TEST_CASE("exact distance ties resolve by gallery index") {
    // the true match sits at index 1, tied with a miss at index 0
    const Matrix dist = {{0.5, 0.5}};
    const EvalReport r = svll::evaluate(dist, {0}, {0}, {1, 0}, {1, 1});
    CHECK(r.mean_ap == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.cmc[0] == 0.0);
    CHECK(r.cmc[1] == 1.0);
}

TEST_CASE("same identity seen by the same camera is never scored") {
    // a zero-distance same-camera copy must not hand out a free rank-1 hit
    const Matrix dist = {{0.0, 0.9, 0.5}};
    const EvalReport r =
        svll::evaluate(dist, {0}, {0}, {0, 0, 1}, {0, 1, 0});
    REQUIRE(r.valid_queries == 1);
    CHECK(r.mean_ap == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.cmc[0] == 0.0);
}

TEST_CASE("negative gallery ids are ignored") {
    const Matrix dist = {{0.0, 0.4}};
    const EvalReport r = svll::evaluate(dist, {0}, {0}, {-1, 0}, {1, 1});
    REQUIRE(r.valid_queries == 1);
    CHECK(r.mean_ap == 1.0);
    CHECK(r.cmc[0] == 1.0);
}

TEST_CASE("queries without a cross-camera positive are skipped and counted") {
    const Matrix dist = {{0.2, 0.3}, {0.1, 0.9}, {0.5, 0.6}};
    // query 1 has no gallery entry of id 7; query 2's only positive shares its camera
    const EvalReport r =
        svll::evaluate(dist, {0, 7, 1}, {0, 0, 1}, {0, 1}, {1, 1});
    CHECK(r.valid_queries == 1);
    CHECK(r.skipped_queries == 2);
    CHECK(r.per_query_ap.size() == 1);
    CHECK(r.mean_ap == 1.0);

    // every query skipped leaves nothing to average over
    CHECK_THROWS_AS(svll::evaluate(dist, {9, 9, 9}, {0, 0, 0}, {0, 1}, {1, 1}),
                    std::runtime_error);
}

TEST_CASE("any strictly increasing distance transform leaves the report unchanged") {
    Rng rng(88);
    const Matrix q = oracle::random_unit_rows(rng, 12, 8);
    const Matrix g = oracle::random_unit_rows(rng, 40, 8);
    const std::vector<int> q_ids = random_ints(rng, 12, 0, 5);
    const std::vector<int> q_cams = random_ints(rng, 12, 0, 2);
    const std::vector<int> g_ids = random_ints(rng, 40, 0, 5);
    const std::vector<int> g_cams = random_ints(rng, 40, 0, 2);
    Matrix dist = svll::pairwise_distances(q, g);
    const EvalReport a = svll::evaluate(dist, q_ids, q_cams, g_ids, g_cams);
    for (auto& row : dist)
        for (double& v : row) v = 3.0 * v + 0.7;
    const EvalReport b = svll::evaluate(dist, q_ids, q_cams, g_ids, g_cams);
    CHECK(a.mean_ap == b.mean_ap);
    CHECK(a.cmc == b.cmc);
    CHECK(a.per_query_ap == b.per_query_ap);
}

TEST_CASE("noiseless synthetic images evaluate to perfect retrieval on raw pixels") {
    svll::SyntheticSpec spec;
    spec.n_identities = 6;
    spec.train_per_id = 2;
    spec.query_per_id = 2;
    spec.gallery_per_id = 4;
    spec.clutter = 0.0;
    spec.illumination = 0.0;
    spec.occlusion = 0.0;
    spec.seed = 5;
    const svll::DatasetManifest m = svll::generate_synthetic(spec);
    auto embed = [&](const std::vector<std::size_t>& idx) {
        Matrix e;
        for (std::size_t i : idx) {
            std::vector<double> row(m.images[i].pixels.begin(), m.images[i].pixels.end());
            double norm = 0;
            for (double v : row) norm += v * v;
            norm = std::sqrt(norm);
            for (double& v : row) v /= norm;
            e.push_back(std::move(row));
        }
        return e;
    };
    const auto q_idx = m.indices(svll::Split::query);
    const auto g_idx = m.indices(svll::Split::gallery);
    std::vector<int> q_ids, q_cams, g_ids, g_cams;
    for (std::size_t i : q_idx) {
        q_ids.push_back(m.samples[i].id);
        q_cams.push_back(m.samples[i].cam);
    }
    for (std::size_t i : g_idx) {
        g_ids.push_back(m.samples[i].id);
        g_cams.push_back(m.samples[i].cam);
    }
    const Matrix dist = svll::pairwise_distances(embed(q_idx), embed(g_idx));
    const EvalReport r = svll::evaluate(dist, q_ids, q_cams, g_ids, g_cams);
    CHECK(r.valid_queries == q_idx.size());
    CHECK(r.cmc[0] == 1.0);
    CHECK(r.mean_ap == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("report serialization writes every field") {
    const Matrix dist = {{0.1, 0.2, 0.3}};
    const EvalReport r = svll::evaluate(dist, {0}, {0}, {0, 1, 0}, {1, 1, 1});
    const auto path = std::filesystem::temp_directory_path() / "svll_test_report.json";
    svll::save_report(r, path.string());
    std::ifstream in(path);
    const nlohmann::json j = nlohmann::json::parse(in);
    CHECK(j.at("mean_ap").get<double>() == doctest::Approx(5.0 / 6.0));
    CHECK(j.at("cmc").size() == 10);
    CHECK(j.at("per_query_ap").size() == 1);
    CHECK(j.at("valid_queries").get<std::size_t>() == 1);
    CHECK(j.at("skipped_queries").get<std::size_t>() == 0);
    std::filesystem::remove(path);
}

TEST_CASE("projection of exactly planar data preserves pairwise distances") {
    Rng rng(7);
    const std::size_t n = 40, d = 8;
    // orthonormal basis of a random plane in R^d
    std::vector<double> u(d), w(d);
    for (auto* vec : {&u, &w})
        for (double& x : *vec) x = rng.normal();
    double nu = 0;
    for (double x : u) nu += x * x;
    for (double& x : u) x /= std::sqrt(nu);
    double uw = 0;
    for (std::size_t i = 0; i < d; ++i) uw += u[i] * w[i];
    for (std::size_t i = 0; i < d; ++i) w[i] -= uw * u[i];
    double nw = 0;
    for (double x : w) nw += x * x;
    for (double& x : w) x /= std::sqrt(nw);

    std::vector<std::array<double, 2>> latent(n);
    Matrix x(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i) {
        latent[i] = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)};
        for (std::size_t j = 0; j < d; ++j)
            x[i][j] = 0.3 + latent[i][0] * u[j] + latent[i][1] * w[j];
    }
    const auto proj = svll::pca_project_2d(x);
    REQUIRE(proj.size() == n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j)
            CHECK(dist2(proj[i], proj[j]) == doctest::Approx(dist2(latent[i], latent[j])).epsilon(1e-8));
}

TEST_CASE("projection axes are uncorrelated and ordered by variance") {
    Rng rng(19);
    const Matrix x = random_matrix(rng, 30, 6);
    const auto proj = svll::pca_project_2d(x);
    double ma = 0, mb = 0;
    for (const auto& p : proj) {
        ma += p[0];
        mb += p[1];
    }
    ma /= 30;
    mb /= 30;
    double va = 0, vb = 0, cab = 0;
    for (const auto& p : proj) {
        va += (p[0] - ma) * (p[0] - ma);
        vb += (p[1] - mb) * (p[1] - mb);
        cab += (p[0] - ma) * (p[1] - mb);
    }
    CHECK(va >= vb);
    CHECK(vb > 0.0);
    CHECK(std::abs(cab) / std::sqrt(va * vb) <= 1e-6);
    // centering: projected coordinates average to zero
    CHECK(std::abs(ma) <= 1e-9);
    CHECK(std::abs(mb) <= 1e-9);
}

TEST_CASE("projection sign convention is reproducible") {
    // variance dominated by the first input axis, ascending with row index
    Matrix x(20, std::vector<double>(5, 0.0));
    Rng rng(2);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i][0] = static_cast<double>(i);
        for (std::size_t j = 1; j < 5; ++j) x[i][j] = 0.01 * rng.normal();
    }
    const auto a = svll::pca_project_2d(x);
    const auto b = svll::pca_project_2d(x);
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i][0] == b[i][0]);
        CHECK(a[i][1] == b[i][1]);
    }
    // with the dominant coefficient forced positive, the first coordinate ascends
    for (std::size_t i = 0; i + 1 < a.size(); ++i) CHECK(a[i][0] < a[i + 1][0]);
}

TEST_CASE("cluster ratio separates tight classes from spread ones") {
    const Matrix pts = {{0, 0}, {0, 1}, {10, 0}, {10, 1}};
    const std::vector<int> ids = {0, 0, 1, 1};
    const double want_inter = (10.0 + 10.0 + 2.0 * std::sqrt(101.0)) / 4.0;
    CHECK(svll::cluster_ratio(pts, ids) == doctest::Approx(1.0 / want_inter).epsilon(1e-12));
    CHECK(svll::cluster_ratio(pts, ids) < 1.0);
    CHECK_THROWS_AS(svll::cluster_ratio(pts, {0, 0, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(svll::cluster_ratio(pts, {0, 1}), std::invalid_argument);
}

TEST_CASE("projection csv lists x,y,id,stage per row") {
    const auto path = std::filesystem::temp_directory_path() / "svll_test_proj.csv";
    svll::write_projection_csv(path.string(), {{1.5, -2.0}, {0.25, 3.0}}, {4, 7},
                               {"untrained", "stage2"});
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "x,y,id,stage");
    std::getline(in, line);
    CHECK(line == "1.5,-2,4,untrained");
    std::getline(in, line);
    CHECK(line == "0.25,3,7,stage2");
    std::filesystem::remove(path);
    CHECK_THROWS_AS(svll::write_projection_csv(path.string(), {{0, 0}}, {1, 2}, {"a"}),
                    std::invalid_argument);
}
