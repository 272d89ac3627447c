#ifndef SUBTYPER_CHIMERA_HPP
#define SUBTYPER_CHIMERA_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "subtyper/cohort.hpp"

namespace subtyper {

// Translation-only generative model: the patient distribution is the control
// point cloud moved by one of k displacement vectors, blurred by a shared
// isotropic Gaussian. Component centers are {control + d_j}, equal weights.
struct ChimeraModel {
  Eigen::MatrixXd displacements;  // k x p
  Eigen::MatrixXd xi;             // m x k responsibilities, rows sum to 1
  double sigma2 = 1.0;
};

struct ChimeraFit {
  ChimeraModel model;
  double loglik = 0.0;
  std::vector<double> loglik_trace;  // winning restart, non-decreasing
  bool converged = false;
  int iterations = 0;
};

ChimeraFit fit_chimera(const Cohort& cohort, int k, std::uint64_t seed, int max_iter = 500,
                       double tol = 1e-8);

// marginal responsibility of displacement j for each patient row
Eigen::MatrixXd chimera_responsibilities(const Eigen::MatrixXd& displacements, double sigma2,
                                         const Eigen::MatrixXd& patients,
                                         const Eigen::MatrixXd& controls);

// argmax responsibility per patient, ties to the lowest index
std::vector<int> assign_chimera(const ChimeraModel& model, const Eigen::MatrixXd& patients,
                                const Eigen::MatrixXd& controls);

}  // namespace subtyper

#endif
