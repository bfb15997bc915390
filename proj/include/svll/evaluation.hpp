#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace svll {

using Matrix = std::vector<std::vector<double>>;

struct EvalReport {
    double mean_ap = 0.0;
    std::vector<double> cmc;          // cmc[r-1] = fraction with a hit in the top r
    std::vector<double> per_query_ap; // one entry per scored query, in query order
    std::size_t valid_queries = 0;
    std::size_t skipped_queries = 0;  // queries with no cross-camera positive
};

/// Euclidean distances between every query/gallery row pair.
Matrix pairwise_distances(const Matrix& queries, const Matrix& gallery);

/// Retrieval quality under the cross-camera protocol: gallery entries
/// sharing the query's identity and camera are ignored, ties are broken by
/// gallery index, and queries without any remaining positive are skipped.
/// `max_rank` sets the length of the CMC curve. Throws when every query
/// ends up skipped.
EvalReport evaluate(const Matrix& dist, const std::vector<int>& q_ids,
                    const std::vector<int>& q_cams, const std::vector<int>& g_ids,
                    const std::vector<int>& g_cams, std::size_t max_rank = 10);

void save_report(const EvalReport& report, const std::string& path);

/// Top-two principal components of the row vectors (power iteration with
/// deflation). Each axis is sign-fixed so its largest-magnitude coefficient
/// is positive, making projections reproducible across runs.
std::vector<std::array<double, 2>> pca_project_2d(const Matrix& x);

/// "x,y,id,stage" rows for plotting projected embeddings.
void write_projection_csv(const std::string& path,
                          const std::vector<std::array<double, 2>>& coords,
                          const std::vector<int>& ids, const std::vector<std::string>& stages);

/// Mean intra-class pairwise distance over mean inter-class pairwise
/// distance; below 1 means identities form tighter clusters than the
/// space as a whole.
double cluster_ratio(const Matrix& points, const std::vector<int>& ids);

}  // namespace svll
