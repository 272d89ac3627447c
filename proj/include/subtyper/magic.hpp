#ifndef SUBTYPER_MAGIC_HPP
#define SUBTYPER_MAGIC_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "subtyper/cohort.hpp"
#include "subtyper/hydra.hpp"
#include "subtyper/opnmf.hpp"

namespace subtyper {

struct MagicConfig {
  std::vector<int> scales;  // component counts, strictly increasing; empty = default schedule
  int k = 2;
  HydraConfig hydra;        // hydra.k is overridden by k
  std::uint64_t consensus_seed = 0;
  int jobs = 1;             // concurrent outer-cycle branches
};

// one pooled partition: the latest converged fit of one branch at one scale
struct ScalePartition {
  int scale = 0;
  int branch = 0;  // index of the starting scale of the branch
  double objective = 0.0;
  std::vector<int> labels;
};

struct MagicResult {
  std::vector<int> labels;          // final consensus subtype per patient
  Eigen::MatrixXd cooccurrence;     // m x m, diagonal 1
  std::vector<ScalePartition> pool;
  std::vector<ScaleBasis> bases;    // one per scale, in schedule order
  Eigen::MatrixXd centroids;        // k x p cluster means in the input feature space
  double scale_consistency = 0.0;   // mean pairwise ARI across pooled partitions
  bool converged = true;            // every branch contributed only converged partitions
  std::vector<std::string> warnings;
};

// powers of two from 2 up to min(64, p/2)
std::vector<int> default_scales(int p);

// fraction of partitions placing each patient pair in the same cluster
Eigen::MatrixXd build_cooccurrence(const std::vector<std::vector<int>>& partitions);

// normalized spectral clustering of a symmetric similarity matrix: k smallest
// eigenvectors of I - D^(-1/2) A D^(-1/2), rows unit-normalized, then k-means
std::vector<int> spectral_cluster(const Eigen::MatrixXd& similarity, int k, std::uint64_t seed);

// co-occurrence consensus over label vectors; output relabeled to best match
// the first partition (cluster ids are nominal)
std::vector<int> consensus_from_partitions(const std::vector<std::vector<int>>& partitions, int k,
                                           std::uint64_t seed);

// Double-cyclic multi-scale fit: one branch per starting scale transfers the
// membership through the scale list; converged endpoint partitions feed the
// consensus. Cohort features must be non-negative (rescaled) on entry.
MagicResult fit_magic(const Cohort& cohort, const MagicConfig& cfg);

}  // namespace subtyper

#endif
