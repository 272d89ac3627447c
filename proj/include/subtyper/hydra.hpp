#ifndef SUBTYPER_HYDRA_HPP
#define SUBTYPER_HYDRA_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "subtyper/cohort.hpp"
#include "subtyper/wsvm.hpp"

namespace subtyper {

// k max-margin hyperplanes enclosing the control group; patients live on the
// outside of the face whose decision value is largest.
struct Polytope {
  std::vector<Hyperplane> faces;

  int k() const { return static_cast<int>(faces.size()); }
  Eigen::Index dim() const { return faces.empty() ? 0 : faces.front().w.size(); }
};

enum class EmptyClusterPolicy { reseed, shrink };

struct HydraConfig {
  int k = 2;
  double mu = 1.0;
  int n_restarts = 5;
  int max_alternations = 50;
  std::uint64_t seed = 0;
  EmptyClusterPolicy empty_cluster_policy = EmptyClusterPolicy::reseed;
  double svm_tol = 1e-6;
  int svm_max_iter = 10000;
  int jobs = 1;  // concurrent restarts
};

struct HydraFit {
  Polytope polytope;
  Eigen::MatrixXd S;  // m x k one-hot membership of the patient rows
  double objective = 0.0;
  bool converged = false;       // membership stabilized within the budget
  bool svm_converged = true;    // every face solve hit its tolerance
  int alternations = 0;
  std::vector<double> objective_trace;  // winning restart, one entry per alternation
  std::vector<std::string> warnings;
};

// one-hot argmax of the face decision values; ties go to the lowest face index
Eigen::MatrixXd assign_membership(const Polytope& poly, const Eigen::MatrixXd& patients);

std::vector<int> membership_labels(const Eigen::MatrixXd& S);
Eigen::MatrixXd membership_from_labels(const std::vector<int>& labels, int k);

// sum over faces of the weighted-SVM objective: controls carry weight 1/k on
// the negative side of every face, patient i carries S(i,j) on face j
double hydra_objective(const Polytope& poly, const Cohort& cohort, const Eigen::MatrixXd& S,
                       double mu);

HydraFit fit_hydra(const Cohort& cohort, const HydraConfig& cfg);

// single alternation run from a caller-supplied membership (no restarts);
// used for transferring a partition between representations
HydraFit fit_hydra_from(const Cohort& cohort, const HydraConfig& cfg,
                        const Eigen::MatrixXd& S_init);

}  // namespace subtyper

#endif
