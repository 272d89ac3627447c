#ifndef SUBTYPER_BASELINES_HPP
#define SUBTYPER_BASELINES_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "subtyper/common.hpp"

namespace subtyper {

struct KmeansResult {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;  // k x p
  double wcss = 0.0;
  std::vector<double> wcss_trace;  // winning restart, one entry per Lloyd iteration
  int iterations = 0;
  bool converged = false;
};

// Lloyd iterations from k-means++ seeds, best of n_restarts by final
// within-cluster sum of squares (ties to the lowest restart index).
// Nearest-centroid ties break to the lowest centroid index.
KmeansResult kmeans(const Eigen::MatrixXd& X, int k, std::uint64_t seed, int max_iter = 100,
                    int n_restarts = 10);

// k-means++ seeding only (exposed for reuse as initialization elsewhere).
Eigen::MatrixXd kmeanspp_seeds(const Eigen::MatrixXd& X, int k, Rng& rng);

// nearest centroid per row, ties to the lowest centroid index
std::vector<int> nearest_centroid_labels(const Eigen::MatrixXd& X,
                                         const Eigen::MatrixXd& centroids);

enum class Linkage { single, complete, average, ward };

Linkage linkage_from_string(const std::string& name);
std::string linkage_to_string(Linkage linkage);

struct Merge {
  int left;         // node id, leaves are 0..n-1, merges n, n+1, ...
  int right;        // left < right
  double distance;  // linkage height
  int id;           // id of the merged node
};

struct Dendrogram {
  int n_leaves = 0;
  std::vector<Merge> merges;  // exactly n_leaves - 1 entries
};

// Greedy agglomeration under the Euclidean metric. Ties in the minimum linkage
// distance break to the lexicographically lowest (left, right) node-id pair.
Dendrogram hierarchical(const Eigen::MatrixXd& X, Linkage linkage = Linkage::ward);

// Undoes the last k-1 merges and labels connected components in order of first
// appearance over the sample index.
std::vector<int> cut_dendrogram(const Dendrogram& dendrogram, int k);

}  // namespace subtyper

#endif
