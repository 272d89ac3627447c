#include "subtyper/magic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <set>

#include "subtyper/common.hpp"
#include "subtyper/validation.hpp"

namespace subtyper {

std::vector<int> default_scales(int p) {
  const int limit = std::min(64, p / 2);
  if (limit < 2) {
    throw ValidationError("magic: too few features for the default scale schedule (need p >= 4)");
  }
  std::vector<int> scales;
  for (int s = 2; s <= limit; s *= 2) scales.push_back(s);
  return scales;
}

Eigen::MatrixXd build_cooccurrence(const std::vector<std::vector<int>>& partitions) {
  if (partitions.empty()) throw ValidationError("consensus: no partitions supplied");
  const std::size_t m = partitions.front().size();
  for (const auto& part : partitions) {
    if (part.size() != m) throw ValidationError("consensus: partitions differ in length");
  }
  Eigen::MatrixXd co = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m),
                                             static_cast<Eigen::Index>(m));
  for (const auto& part : partitions) {
    for (std::size_t a = 0; a < m; ++a) {
      for (std::size_t b = a; b < m; ++b) {
        if (part[a] == part[b]) {
          co(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b)) += 1.0;
        }
      }
    }
  }
  co /= static_cast<double>(partitions.size());
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      co(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(a)) =
          co(static_cast<Eigen::Index>(a), static_cast<Eigen::Index>(b));
    }
  }
  return co;
}

std::vector<int> spectral_cluster(const Eigen::MatrixXd& similarity, int k, std::uint64_t seed) {
  const Eigen::Index m = similarity.rows();
  if (m == 0 || similarity.cols() != m) {
    throw ValidationError("spectral: similarity matrix must be square and non-empty");
  }
  if (k < 1 || k > m) throw ValidationError("spectral: k out of range");
  if (!similarity.isApprox(similarity.transpose(), 1e-10)) {
    throw ValidationError("spectral: similarity matrix must be symmetric");
  }

  const Eigen::VectorXd degree = similarity.rowwise().sum();
  Eigen::VectorXd inv_sqrt(m);
  for (Eigen::Index i = 0; i < m; ++i) {
    inv_sqrt[i] = degree[i] > 0.0 ? 1.0 / std::sqrt(degree[i]) : 0.0;
  }
  const Eigen::MatrixXd lap = Eigen::MatrixXd::Identity(m, m) -
                              inv_sqrt.asDiagonal() * similarity * inv_sqrt.asDiagonal();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
      0.5 * (lap + lap.transpose()));  // symmetrize away round-off
  if (eig.info() != Eigen::Success) throw FitError("spectral: eigendecomposition failed");

  Eigen::MatrixXd embedding = eig.eigenvectors().leftCols(k);  // ascending eigenvalues
  for (Eigen::Index i = 0; i < m; ++i) {
    const double norm = embedding.row(i).norm();
    if (norm > 0.0) embedding.row(i) /= norm;
  }
  return kmeans(embedding, k, seed).labels;
}

namespace {

// relabel `labels` so clusters line up with `reference` where possible;
// greedy on the largest contingency cells, deterministic
std::vector<int> match_labels(const std::vector<int>& reference, const std::vector<int>& labels,
                              int k) {
  std::map<std::pair<int, int>, int> counts;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++counts[{reference[i], labels[i]}];
  }
  std::vector<int> mapping(static_cast<std::size_t>(k), -1);
  std::set<int> used_refs;
  for (int round = 0; round < k; ++round) {
    int best_count = -1;
    std::pair<int, int> best_cell{0, 0};
    for (const auto& [cell, count] : counts) {
      const auto& [ref_id, lab_id] = cell;
      if (ref_id < 0 || ref_id >= k || lab_id < 0 || lab_id >= k) continue;
      if (mapping[static_cast<std::size_t>(lab_id)] >= 0 || used_refs.count(ref_id)) continue;
      if (count > best_count) {
        best_count = count;
        best_cell = cell;
      }
    }
    if (best_count < 0) break;
    mapping[static_cast<std::size_t>(best_cell.second)] = best_cell.first;
    used_refs.insert(best_cell.first);
  }
  int next_free = 0;
  for (int lab = 0; lab < k; ++lab) {
    if (mapping[static_cast<std::size_t>(lab)] >= 0) continue;
    while (used_refs.count(next_free)) ++next_free;
    mapping[static_cast<std::size_t>(lab)] = next_free;
    used_refs.insert(next_free);
  }
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    out[i] = mapping[static_cast<std::size_t>(labels[i])];
  }
  return out;
}

double mean_pairwise_ari(const std::vector<std::vector<int>>& partitions) {
  if (partitions.size() < 2) return partitions.empty() ? 0.0 : 1.0;
  double total = 0.0;
  int pairs = 0;
  for (std::size_t a = 0; a < partitions.size(); ++a) {
    for (std::size_t b = a + 1; b < partitions.size(); ++b) {
      total += adjusted_rand_index(partitions[a], partitions[b]);
      ++pairs;
    }
  }
  return total / pairs;
}

// control-anchored standardization of the opNMF loadings so every scale feeds
// comparably scaled features to the max-margin step
Eigen::MatrixXd standardized_loadings(const ScaleBasis& basis, const Cohort& cohort) {
  const Eigen::MatrixXd L = project(basis, cohort.features.transpose());  // r x n
  Eigen::MatrixXd F = L.transpose();                                      // n x r
  const auto controls = cohort.control_rows();
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(F.cols());
  for (Eigen::Index row : controls) mean += F.row(row);
  mean /= static_cast<double>(controls.size());
  Eigen::RowVectorXd var = Eigen::RowVectorXd::Zero(F.cols());
  for (Eigen::Index row : controls) {
    var += (F.row(row) - mean).cwiseAbs2();
  }
  var /= static_cast<double>(std::max<std::size_t>(controls.size() - 1, 1));
  Eigen::RowVectorXd sd = var.cwiseSqrt();
  for (Eigen::Index j = 0; j < sd.size(); ++j) {
    if (sd[j] < 1e-12) sd[j] = 1.0;
  }
  F = (F.rowwise() - mean).array().rowwise() / sd.array();
  return F;
}

struct BranchOutcome {
  std::vector<ScalePartition> pool;
  bool all_converged = true;
  std::vector<std::string> warnings;
};

BranchOutcome run_branch(const std::vector<Cohort>& scale_cohorts, const std::vector<int>& scales,
                         const MagicConfig& cfg, int branch) {
  const int n_scales = static_cast<int>(scales.size());
  BranchOutcome out;

  HydraConfig base = cfg.hydra;
  base.k = cfg.k;
  base.jobs = 1;  // branches already run in parallel
  base.seed = derive_seed(cfg.hydra.seed, 0x6d61676963ull + static_cast<std::uint64_t>(branch));

  struct Latest {
    std::vector<int> labels;
    double objective = 0.0;
    bool converged = false;
    bool visited = false;
  };
  std::vector<Latest> latest(static_cast<std::size_t>(n_scales));

  HydraFit fit = fit_hydra(scale_cohorts[static_cast<std::size_t>(branch)], base);
  std::vector<int> prev_labels = membership_labels(fit.S);
  latest[static_cast<std::size_t>(branch)] =
      {prev_labels, fit.objective, fit.converged, true};

  const int max_visits = 3 * n_scales;
  for (int visit = 1; visit < max_visits; ++visit) {
    const int idx = (branch + visit) % n_scales;
    HydraConfig transfer = base;
    transfer.n_restarts = 1;  // warm start from the carried membership
    const Eigen::MatrixXd S0 = membership_from_labels(prev_labels, cfg.k);
    HydraFit next = fit_hydra_from(scale_cohorts[static_cast<std::size_t>(idx)], transfer, S0);
    const std::vector<int> labels = membership_labels(next.S);
    latest[static_cast<std::size_t>(idx)] = {labels, next.objective, next.converged, true};
    const double agreement = adjusted_rand_index(prev_labels, labels);
    prev_labels = labels;
    if (agreement >= 0.999) break;
  }

  for (int idx = 0; idx < n_scales; ++idx) {
    const Latest& entry = latest[static_cast<std::size_t>(idx)];
    if (!entry.visited) continue;
    if (!entry.converged) {
      out.all_converged = false;
      out.warnings.push_back("branch " + std::to_string(branch) + ": scale " +
                             std::to_string(scales[static_cast<std::size_t>(idx)]) +
                             " did not converge; excluded from consensus");
      continue;
    }
    ScalePartition part;
    part.scale = scales[static_cast<std::size_t>(idx)];
    part.branch = branch;
    part.objective = entry.objective;
    part.labels = entry.labels;
    out.pool.push_back(std::move(part));
  }
  return out;
}

}  // namespace

std::vector<int> consensus_from_partitions(const std::vector<std::vector<int>>& partitions, int k,
                                           std::uint64_t seed) {
  const Eigen::MatrixXd co = build_cooccurrence(partitions);
  std::vector<int> labels = spectral_cluster(co, k, seed);
  return match_labels(partitions.front(), labels, k);
}

MagicResult fit_magic(const Cohort& cohort, const MagicConfig& cfg) {
  cohort.validate();
  cohort.require_both_classes();
  if (cfg.k < 1) throw ValidationError("magic: k must be at least 1");
  if (static_cast<int>(cohort.n_patients()) < cfg.k) {
    throw ValidationError("magic: fewer patients than clusters (m < k)");
  }
  if (cohort.features.minCoeff() < 0.0) {
    throw ValidationError("magic: features must be non-negative (rescale before fitting)");
  }

  std::vector<int> scales =
      cfg.scales.empty() ? default_scales(static_cast<int>(cohort.features.cols())) : cfg.scales;
  const int rank_limit =
      static_cast<int>(std::min(cohort.features.rows(), cohort.features.cols()));
  for (std::size_t i = 0; i < scales.size(); ++i) {
    if (scales[i] < 1) throw ValidationError("magic: scales must be positive");
    if (scales[i] > rank_limit) {
      throw ValidationError("magic: scale " + std::to_string(scales[i]) +
                            " exceeds min(subjects, features) = " + std::to_string(rank_limit));
    }
    if (i > 0 && scales[i] <= scales[i - 1]) {
      throw ValidationError("magic: scales must be strictly increasing");
    }
  }

  MagicResult result;

  // one representation per scale, shared by every branch
  std::vector<Cohort> scale_cohorts(scales.size());
  result.bases.resize(scales.size());
  const Eigen::MatrixXd Xt = cohort.features.transpose();  // p x n, samples in columns
  for (std::size_t s = 0; s < scales.size(); ++s) {
    try {
      OpnmfResult nmf = fit_opnmf(Xt, scales[s], derive_seed(cfg.hydra.seed, 0x6f706e6d66ull +
                                                             static_cast<std::uint64_t>(s)));
      result.bases[s] = std::move(nmf.basis);
    } catch (const std::exception& e) {
      throw FitError("magic: scale " + std::to_string(scales[s]) + " failed: " + e.what());
    }
    Cohort reduced = cohort;
    reduced.features = standardized_loadings(result.bases[s], cohort);
    reduced.feature_names.clear();
    for (int j = 0; j < scales[s]; ++j) {
      reduced.feature_names.push_back("scale" + std::to_string(scales[s]) + "_c" +
                                      std::to_string(j + 1));
    }
    scale_cohorts[s] = std::move(reduced);
  }

  std::vector<BranchOutcome> branches(scales.size());
  try {
    parallel_for(scales.size(), cfg.jobs, [&](std::size_t b) {
      branches[b] = run_branch(scale_cohorts, scales, cfg, static_cast<int>(b));
    });
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw FitError(std::string("magic: branch failed: ") + e.what());
  }

  std::vector<std::vector<int>> pooled_labels;
  for (auto& branch : branches) {
    result.converged = result.converged && branch.all_converged;
    for (auto& warning : branch.warnings) result.warnings.push_back(std::move(warning));
    for (auto& part : branch.pool) {
      pooled_labels.push_back(part.labels);
      result.pool.push_back(std::move(part));
    }
  }
  if (pooled_labels.empty()) {
    throw FitError("magic: no scale produced a converged partition");
  }

  result.scale_consistency = mean_pairwise_ari(pooled_labels);
  result.cooccurrence = build_cooccurrence(pooled_labels);
  std::vector<int> labels = spectral_cluster(result.cooccurrence, cfg.k, cfg.consensus_seed);
  result.labels = match_labels(pooled_labels.front(), labels, cfg.k);

  // cluster means in the input feature space, for assigning unseen patients
  const Eigen::MatrixXd patients = cohort.patient_features();
  result.centroids = Eigen::MatrixXd::Zero(cfg.k, cohort.features.cols());
  Eigen::VectorXd sizes = Eigen::VectorXd::Zero(cfg.k);
  for (Eigen::Index i = 0; i < patients.rows(); ++i) {
    result.centroids.row(result.labels[static_cast<std::size_t>(i)]) += patients.row(i);
    sizes[result.labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int j = 0; j < cfg.k; ++j) {
    if (sizes[j] > 0.0) {
      result.centroids.row(j) /= sizes[j];
    } else {
      result.warnings.push_back("consensus cluster " + std::to_string(j + 1) + " is empty");
    }
  }
  return result;
}

}  // namespace subtyper
