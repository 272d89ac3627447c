#include "subtyper/hydra.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "subtyper/baselines.hpp"
#include "subtyper/common.hpp"

namespace subtyper {

Eigen::MatrixXd assign_membership(const Polytope& poly, const Eigen::MatrixXd& patients) {
  if (poly.faces.empty()) throw ValidationError("assign_membership: polytope has no faces");
  if (patients.cols() != poly.dim()) {
    throw ValidationError("assign_membership: patient dimension does not match the polytope");
  }
  const Eigen::Index m = patients.rows();
  const int k = poly.k();
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(m, k);
  for (Eigen::Index i = 0; i < m; ++i) {
    double best = -std::numeric_limits<double>::infinity();
    int best_j = 0;
    for (int j = 0; j < k; ++j) {
      const double d = decision_value(poly.faces[static_cast<std::size_t>(j)], patients.row(i).transpose());
      if (d > best) {
        best = d;
        best_j = j;
      }
    }
    S(i, best_j) = 1.0;
  }
  return S;
}

std::vector<int> membership_labels(const Eigen::MatrixXd& S) {
  std::vector<int> labels(static_cast<std::size_t>(S.rows()), 0);
  for (Eigen::Index i = 0; i < S.rows(); ++i) {
    for (Eigen::Index j = 0; j < S.cols(); ++j) {
      if (S(i, j) > 0.5) {
        labels[static_cast<std::size_t>(i)] = static_cast<int>(j);
        break;
      }
    }
  }
  return labels;
}

Eigen::MatrixXd membership_from_labels(const std::vector<int>& labels, int k) {
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(labels.size()), k);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= k) {
      throw ValidationError("membership_from_labels: label out of range");
    }
    S(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  }
  return S;
}

double hydra_objective(const Polytope& poly, const Cohort& cohort, const Eigen::MatrixXd& S,
                       double mu) {
  const int k = poly.k();
  if (k == 0) throw ValidationError("hydra_objective: polytope has no faces");
  if (cohort.features.cols() != poly.dim()) {
    throw ValidationError("hydra_objective: cohort dimension does not match the polytope");
  }
  if (S.rows() != static_cast<Eigen::Index>(cohort.n_patients()) || S.cols() != k) {
    throw ValidationError("hydra_objective: membership shape mismatch");
  }
  const auto controls = cohort.control_rows();
  const auto patients = cohort.patient_rows();
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    const Hyperplane& face = poly.faces[static_cast<std::size_t>(j)];
    total += 0.5 * face.w.squaredNorm();
    double hinge = 0.0;
    for (Eigen::Index row : controls) {
      const double d = decision_value(face, cohort.features.row(row).transpose());
      hinge += (1.0 / k) * std::max(0.0, 1.0 + d);
    }
    for (std::size_t i = 0; i < patients.size(); ++i) {
      const double s = S(static_cast<Eigen::Index>(i), j);
      if (s == 0.0) continue;
      const double d = decision_value(face, cohort.features.row(patients[i]).transpose());
      hinge += s * std::max(0.0, 1.0 - d);
    }
    total += mu * hinge;
  }
  return total;
}

namespace {

void validate_config(const Cohort& cohort, const HydraConfig& cfg) {
  cohort.validate();
  cohort.require_both_classes();
  if (cfg.k < 1) throw ValidationError("hydra: k must be at least 1");
  if (cfg.mu <= 0.0) throw ValidationError("hydra: mu must be positive");
  if (cfg.n_restarts < 1) throw ValidationError("hydra: n_restarts must be at least 1");
  if (cfg.max_alternations < 1) throw ValidationError("hydra: max_alternations must be at least 1");
  if (static_cast<int>(cohort.n_patients()) < cfg.k) {
    throw ValidationError("hydra: fewer patients than clusters (m < k)");
  }
}

// weighted-SVM solve of face j given the current membership column
SvmResult solve_face(const Cohort& cohort, const Eigen::VectorXd& patient_weights, int k,
                     const HydraConfig& cfg) {
  WeightedProblem prob;
  prob.features = cohort.features;
  prob.labels = cohort.labels;
  prob.mu = cfg.mu;
  prob.weights = Eigen::VectorXd::Zero(cohort.features.rows());
  const auto controls = cohort.control_rows();
  const auto patients = cohort.patient_rows();
  for (Eigen::Index row : controls) prob.weights[row] = 1.0 / k;
  for (std::size_t i = 0; i < patients.size(); ++i) {
    prob.weights[patients[i]] = patient_weights[static_cast<Eigen::Index>(i)];
  }
  return solve_weighted_svm(prob, cfg.svm_tol, cfg.svm_max_iter);
}

// Move the patient with the worst best-face margin into each empty cluster so
// every face keeps at least one positively weighted sample.
void reseed_empty_clusters(Eigen::MatrixXd& S, const Polytope& poly,
                           const Eigen::MatrixXd& patients) {
  const int k = static_cast<int>(S.cols());
  Eigen::VectorXd counts = S.colwise().sum();
  for (int j = 0; j < k; ++j) {
    if (counts[j] > 0.0) continue;
    Eigen::Index worst = -1;
    double worst_margin = std::numeric_limits<double>::infinity();
    for (Eigen::Index i = 0; i < S.rows(); ++i) {
      int owner = 0;
      for (int c = 0; c < k; ++c) {
        if (S(i, c) > 0.5) owner = c;
      }
      if (counts[owner] <= 1.0) continue;  // keep donors non-empty
      double best = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        best = std::max(best, decision_value(poly.faces[static_cast<std::size_t>(c)],
                                             patients.row(i).transpose()));
      }
      if (best < worst_margin) {
        worst_margin = best;
        worst = i;
      }
    }
    if (worst < 0) return;  // fewer patients than clusters left; caller shrinks
    int owner = 0;
    for (int c = 0; c < k; ++c) {
      if (S(worst, c) > 0.5) owner = c;
    }
    S.row(worst).setZero();
    S(worst, j) = 1.0;
    counts[owner] -= 1.0;
    counts[j] += 1.0;
  }
}

// polytope-free repair for the first alternation: hand each empty cluster the
// patient farthest from its own cluster centroid
void reseed_by_distance(Eigen::MatrixXd& S, const Eigen::MatrixXd& patients) {
  const int k = static_cast<int>(S.cols());
  std::vector<int> labels = membership_labels(S);
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, patients.cols());
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < patients.rows(); ++i) {
    centroids.row(labels[static_cast<std::size_t>(i)]) += patients.row(i);
    ++counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0) {
      centroids.row(j) /= static_cast<double>(counts[static_cast<std::size_t>(j)]);
    }
  }
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0) continue;
    Eigen::Index farthest = -1;
    double worst = -1.0;
    for (Eigen::Index i = 0; i < patients.rows(); ++i) {
      const int lab = labels[static_cast<std::size_t>(i)];
      if (counts[static_cast<std::size_t>(lab)] <= 1) continue;
      const double d = (patients.row(i) - centroids.row(lab)).squaredNorm();
      if (d > worst) {
        worst = d;
        farthest = i;
      }
    }
    if (farthest < 0) return;
    --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(farthest)])];
    labels[static_cast<std::size_t>(farthest)] = j;
    counts[static_cast<std::size_t>(j)] = 1;
    S.row(farthest).setZero();
    S(farthest, j) = 1.0;
  }
}

void drop_face(Eigen::MatrixXd& S, Polytope& poly, int j) {
  poly.faces.erase(poly.faces.begin() + j);
  Eigen::MatrixXd reduced(S.rows(), S.cols() - 1);
  Eigen::Index out = 0;
  for (Eigen::Index c = 0; c < S.cols(); ++c) {
    if (c == j) continue;
    reduced.col(out++) = S.col(c);
  }
  S = reduced;
}

HydraFit run_alternations(const Cohort& cohort, const HydraConfig& cfg, Eigen::MatrixXd S) {
  const Eigen::MatrixXd patients = cohort.patient_features();
  HydraFit fit;
  fit.S = std::move(S);
  fit.polytope.faces.assign(static_cast<std::size_t>(fit.S.cols()), Hyperplane{});

  for (int iter = 0; iter < cfg.max_alternations; ++iter) {
    int k = static_cast<int>(fit.S.cols());

    // guard against empty columns before posing the SVM subproblems
    for (int j = 0; j < k;) {
      if (fit.S.col(j).sum() > 0.0) {
        ++j;
        continue;
      }
      if (cfg.empty_cluster_policy == EmptyClusterPolicy::reseed) {
        if (iter > 0) {
          reseed_empty_clusters(fit.S, fit.polytope, patients);
        } else {
          reseed_by_distance(fit.S, patients);
        }
        if (fit.S.col(j).sum() > 0.0) {
          ++j;
          continue;
        }
      }
      if (k == 1) throw FitError("hydra: all clusters became empty");
      drop_face(fit.S, fit.polytope, j);
      k = static_cast<int>(fit.S.cols());
      fit.warnings.push_back("empty cluster removed; k reduced to " + std::to_string(k));
    }

    for (int j = 0; j < k; ++j) {
      SvmResult res = solve_face(cohort, fit.S.col(j), k, cfg);
      if (!res.converged) fit.svm_converged = false;
      fit.polytope.faces[static_cast<std::size_t>(j)] = res.plane;
    }

    Eigen::MatrixXd next = assign_membership(fit.polytope, patients);
    fit.objective_trace.push_back(hydra_objective(fit.polytope, cohort, next, cfg.mu));
    fit.alternations = iter + 1;
    const bool stable = next.rows() == fit.S.rows() && next.cols() == fit.S.cols() &&
                        next.cwiseEqual(fit.S).all();
    fit.S = std::move(next);
    if (stable) {
      fit.converged = true;
      break;
    }
  }
  fit.objective = hydra_objective(fit.polytope, cohort, fit.S, cfg.mu);
  return fit;
}

// k-means++ seeding on the patient rows plus one Lloyd pass; guarantees no
// empty cluster when there are at least k distinct patients
Eigen::MatrixXd initial_membership(const Eigen::MatrixXd& patients, int k, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd seeds = kmeanspp_seeds(patients, k, rng);
  std::vector<int> labels = nearest_centroid_labels(patients, seeds);

  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, patients.cols());
  std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < patients.rows(); ++i) {
    centroids.row(labels[static_cast<std::size_t>(i)]) += patients.row(i);
    ++sizes[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])];
  }
  for (int j = 0; j < k; ++j) {
    if (sizes[static_cast<std::size_t>(j)] > 0) {
      centroids.row(j) /= static_cast<double>(sizes[static_cast<std::size_t>(j)]);
    } else {
      centroids.row(j) = seeds.row(j);
    }
  }
  labels = nearest_centroid_labels(patients, centroids);

  // repair empties by stealing the farthest point from a multi-member cluster
  std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
  for (int lab : labels) ++counts[static_cast<std::size_t>(lab)];
  for (int j = 0; j < k; ++j) {
    if (counts[static_cast<std::size_t>(j)] > 0) continue;
    Eigen::Index farthest = -1;
    double worst = -1.0;
    for (Eigen::Index i = 0; i < patients.rows(); ++i) {
      const int lab = labels[static_cast<std::size_t>(i)];
      if (counts[static_cast<std::size_t>(lab)] <= 1) continue;
      const double d = (patients.row(i) - centroids.row(lab)).squaredNorm();
      if (d > worst) {
        worst = d;
        farthest = i;
      }
    }
    if (farthest < 0) break;
    --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(farthest)])];
    labels[static_cast<std::size_t>(farthest)] = j;
    counts[static_cast<std::size_t>(j)] = 1;
  }
  return membership_from_labels(labels, k);
}

}  // namespace

HydraFit fit_hydra(const Cohort& cohort, const HydraConfig& cfg) {
  validate_config(cohort, cfg);
  const Eigen::MatrixXd patients = cohort.patient_features();

  std::vector<HydraFit> fits(static_cast<std::size_t>(cfg.n_restarts));
  parallel_for(static_cast<std::size_t>(cfg.n_restarts), cfg.jobs, [&](std::size_t r) {
    const std::uint64_t restart_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(r));
    Eigen::MatrixXd S0 = initial_membership(patients, cfg.k, restart_seed);
    fits[r] = run_alternations(cohort, cfg, std::move(S0));
  });

  std::size_t best = 0;
  for (std::size_t r = 1; r < fits.size(); ++r) {
    if (fits[r].objective < fits[best].objective) best = r;
  }
  return std::move(fits[best]);
}

HydraFit fit_hydra_from(const Cohort& cohort, const HydraConfig& cfg,
                        const Eigen::MatrixXd& S_init) {
  validate_config(cohort, cfg);
  if (S_init.rows() != static_cast<Eigen::Index>(cohort.n_patients()) ||
      S_init.cols() != cfg.k) {
    throw ValidationError("hydra: initial membership shape mismatch");
  }
  for (Eigen::Index i = 0; i < S_init.rows(); ++i) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < S_init.cols(); ++j) {
      if (S_init(i, j) != 0.0 && S_init(i, j) != 1.0) {
        throw ValidationError("hydra: initial membership must be one-hot");
      }
      sum += S_init(i, j);
    }
    if (sum != 1.0) throw ValidationError("hydra: initial membership must be one-hot");
  }
  return run_alternations(cohort, cfg, S_init);
}

}  // namespace subtyper
