#include "svll/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace svll {

namespace {

void check_matrix(const Matrix& m, const char* what) {
    if (m.empty()) throw std::invalid_argument(std::string(what) + ": empty matrix");
    for (const auto& row : m)
        if (row.size() != m.front().size())
            throw std::invalid_argument(std::string(what) + ": ragged rows");
}

}  // namespace

Matrix pairwise_distances(const Matrix& queries, const Matrix& gallery) {
    check_matrix(queries, "pairwise_distances");
    check_matrix(gallery, "pairwise_distances");
    if (queries.front().size() != gallery.front().size())
        throw std::invalid_argument("pairwise_distances: dimension mismatch");
    Matrix dist(queries.size(), std::vector<double>(gallery.size()));
    for (std::size_t q = 0; q < queries.size(); ++q)
        for (std::size_t g = 0; g < gallery.size(); ++g) {
            double acc = 0.0;
            for (std::size_t k = 0; k < queries[q].size(); ++k) {
                const double d = queries[q][k] - gallery[g][k];
                acc += d * d;
            }
            dist[q][g] = std::sqrt(acc);
        }
    return dist;
}

EvalReport evaluate(const Matrix& dist, const std::vector<int>& q_ids,
                    const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                    const std::vector<int>& g_cams, std::size_t max_rank) {
    check_matrix(dist, "evaluate");
    if (max_rank == 0) throw std::invalid_argument("evaluate: max_rank must be positive");
    if (q_ids.size() != dist.size() || q_cams.size() != dist.size())
        throw std::invalid_argument("evaluate: query metadata length mismatch");
    if (g_ids.size() != dist.front().size() || g_cams.size() != dist.front().size())
        throw std::invalid_argument("evaluate: gallery metadata length mismatch");

    EvalReport report;
    report.cmc.assign(max_rank, 0.0);
    for (std::size_t q = 0; q < dist.size(); ++q) {
        std::vector<std::size_t> order;
        std::size_t relevant = 0;
        for (std::size_t g = 0; g < dist[q].size(); ++g) {
            if (g_ids[g] < 0) continue;
            if (g_ids[g] == q_ids[q] && g_cams[g] == q_cams[q]) continue;
            order.push_back(g);
            if (g_ids[g] == q_ids[q]) ++relevant;
        }
        if (relevant == 0) {
            ++report.skipped_queries;
            continue;
        }
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            if (dist[q][a] != dist[q][b]) return dist[q][a] < dist[q][b];
            return a < b;
        });
        std::size_t hits = 0;
        // extended precision so small rational APs (the 1,0,1 pattern is
        // exactly 5/6) land on the nearest double instead of one ulp off
        long double ap = 0.0L;
        long first_hit = -1;
        for (std::size_t pos = 0; pos < order.size(); ++pos) {
            if (g_ids[order[pos]] != q_ids[q]) continue;
            ++hits;
            ap += static_cast<long double>(hits) / static_cast<long double>(pos + 1);
            if (first_hit < 0) first_hit = static_cast<long>(pos);
        }
        report.per_query_ap.push_back(static_cast<double>(ap / static_cast<long double>(relevant)));
        ++report.valid_queries;
        for (std::size_t r = static_cast<std::size_t>(first_hit); r < max_rank; ++r)
            report.cmc[r] += 1.0;
    }
    if (report.valid_queries == 0)
        throw std::runtime_error("evaluate: no query kept a valid gallery match");
    double sum = 0.0;
    for (double ap : report.per_query_ap) sum += ap;
    report.mean_ap = sum / static_cast<double>(report.valid_queries);
    for (double& c : report.cmc) c /= static_cast<double>(report.valid_queries);
    return report;
}

void save_report(const EvalReport& report, const std::string& path) {
    nlohmann::json j;
    j["mean_ap"] = report.mean_ap;
    j["cmc"] = report.cmc;
    j["per_query_ap"] = report.per_query_ap;
    j["valid_queries"] = report.valid_queries;
    j["skipped_queries"] = report.skipped_queries;
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write report: " + path);
    out << j.dump(2) << '\n';
}

namespace {

// Leading eigenvector of `cov` by power iteration, kept orthogonal to
// `held` (one prior eigenvector, or empty). Returns a unit vector; the
// paired eigenvalue lands in *lambda.
std::vector<double> power_iterate(const Matrix& cov, const std::vector<double>& held,
                                  double* lambda) {
    const std::size_t d = cov.size();
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = 1.0 + 0.01 * static_cast<double>(i);
    auto orthonormalize = [&](std::vector<double>& w) {
        if (!held.empty()) {
            double dot = 0.0;
            for (std::size_t i = 0; i < d; ++i) dot += w[i] * held[i];
            for (std::size_t i = 0; i < d; ++i) w[i] -= dot * held[i];
        }
        double norm = 0.0;
        for (double x : w) norm += x * x;
        norm = std::sqrt(norm);
        if (norm < 1e-300) {
            w.assign(d, 0.0);
            return false;
        }
        for (double& x : w) x /= norm;
        return true;
    };
    if (!orthonormalize(v)) return v;
    double prev = 0.0;
    for (int iter = 0; iter < 1000; ++iter) {
        std::vector<double> w(d, 0.0);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) w[i] += cov[i][j] * v[j];
        double lam = 0.0;
        for (std::size_t i = 0; i < d; ++i) lam += v[i] * w[i];
        if (!orthonormalize(w)) {  // data has no variance along the remaining axes
            *lambda = 0.0;
            return std::vector<double>(d, 0.0);
        }
        v = w;
        if (iter > 0 && std::abs(lam - prev) <= 1e-14 * std::max(1.0, std::abs(lam))) {
            prev = lam;
            break;
        }
        prev = lam;
    }
    *lambda = prev;
    // sign convention: the largest-magnitude coefficient points up
    std::size_t arg = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (std::abs(v[i]) > std::abs(v[arg])) arg = i;
    if (v[arg] < 0.0)
        for (double& x : v) x = -x;
    return v;
}

}  // namespace

std::vector<std::array<double, 2>> pca_project_2d(const Matrix& x) {
    check_matrix(x, "pca_project_2d");
    const std::size_t n = x.size();
    const std::size_t d = x.front().size();
    std::vector<double> mean(d, 0.0);
    for (const auto& row : x)
        for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    for (double& m : mean) m /= static_cast<double>(n);

    Matrix centered(n, std::vector<double>(d));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) centered[i][j] = x[i][j] - mean[j];

    Matrix cov(d, std::vector<double>(d, 0.0));
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t a = 0; a < d; ++a) {
            if (centered[i][a] == 0.0) continue;
            for (std::size_t b = 0; b < d; ++b) cov[a][b] += centered[i][a] * centered[i][b] / denom;
        }

    double l1 = 0.0, l2 = 0.0;
    const std::vector<double> v1 = power_iterate(cov, {}, &l1);
    const std::vector<double> v2 = power_iterate(cov, v1, &l2);

    std::vector<std::array<double, 2>> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        double a = 0.0, b = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            a += centered[i][j] * v1[j];
            b += centered[i][j] * v2[j];
        }
        out[i] = {a, b};
    }
    return out;
}

void write_projection_csv(const std::string& path,
                          const std::vector<std::array<double, 2>>& coords,
                          const std::vector<int>& ids, const std::vector<std::string>& stages) {
    if (coords.size() != ids.size() || coords.size() != stages.size())
        throw std::invalid_argument("write_projection_csv: column length mismatch");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write projection: " + path);
    out << "x,y,id,stage\n";
    out.precision(17);
    for (std::size_t i = 0; i < coords.size(); ++i)
        out << coords[i][0] << ',' << coords[i][1] << ',' << ids[i] << ',' << stages[i] << '\n';
}

double cluster_ratio(const Matrix& points, const std::vector<int>& ids) {
    check_matrix(points, "cluster_ratio");
    if (ids.size() != points.size())
        throw std::invalid_argument("cluster_ratio: id column length mismatch");
    double intra = 0.0, inter = 0.0;
    std::size_t n_intra = 0, n_inter = 0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < points[i].size(); ++k) {
                const double d = points[i][k] - points[j][k];
                acc += d * d;
            }
            const double dist = std::sqrt(acc);
            if (ids[i] == ids[j]) {
                intra += dist;
                ++n_intra;
            } else {
                inter += dist;
                ++n_inter;
            }
        }
    if (n_intra == 0 || n_inter == 0)
        throw std::invalid_argument("cluster_ratio: need both intra- and inter-class pairs");
    return (intra / static_cast<double>(n_intra)) / (inter / static_cast<double>(n_inter));
}

}  // namespace svll
