#ifndef SUBTYPER_WSVM_HPP
#define SUBTYPER_WSVM_HPP

#include <Eigen/Dense>
#include <vector>

#include "subtyper/common.hpp"

namespace subtyper {

struct Hyperplane {
  Eigen::VectorXd w;
  double b = 0.0;
};

// w.x + b
double decision_value(const Hyperplane& h, const Eigen::Ref<const Eigen::VectorXd>& x);

// Soft-margin linear SVM with per-sample weights:
//   min_w,b  0.5*||w||^2 + mu * sum_i weight_i * max(0, 1 - y_i*(w.x_i + b))
struct WeightedProblem {
  Eigen::MatrixXd features;  // n x p
  Eigen::VectorXi labels;    // {+1,-1}^n
  Eigen::VectorXd weights;   // >= 0, at least one positive weight per class
  double mu = 1.0;

  void validate() const;
};

struct SvmResult {
  Hyperplane plane;
  double objective = 0.0;       // primal objective at (w, b)
  double dual_objective = 0.0;  // on the bias-augmented problem
  double gap = 0.0;
  bool converged = false;
  int sweeps = 0;
  std::vector<double> primal_trace;  // per outer sweep
  std::vector<double> dual_trace;
};

// Dual coordinate ascent over box-constrained per-sample multipliers. The free
// bias is approximated by an augmented constant feature of scale 10, so its
// norm contribution to the objective is b^2/200. Deterministic: fixed sample
// visitation order, no shuffling. Stops once the relative duality gap of the
// augmented problem drops below tol, or after max_iter sweeps (then the result
// carries converged = false).
SvmResult solve_weighted_svm(const WeightedProblem& problem, double tol = 1e-6,
                             int max_iter = 10000);

// Primal objective of the stated minimization at a given hyperplane.
double weighted_hinge_objective(const WeightedProblem& problem, const Hyperplane& h);

// Scale of the augmented bias feature (exposed for the dual-oracle tests, which
// must pose the identical augmented problem).
inline constexpr double kBiasFeatureScale = 10.0;

}  // namespace subtyper

#endif
