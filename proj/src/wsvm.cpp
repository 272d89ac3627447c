#include "subtyper/wsvm.hpp"

#include <cmath>

namespace subtyper {

double decision_value(const Hyperplane& h, const Eigen::Ref<const Eigen::VectorXd>& x) {
  if (x.size() != h.w.size())
    throw ValidationError("decision_value: dimension mismatch (" + std::to_string(x.size()) +
                          " vs " + std::to_string(h.w.size()) + ")");
  return h.w.dot(x) + h.b;
}

void WeightedProblem::validate() const {
  const Eigen::Index n = features.rows();
  if (labels.size() != n || weights.size() != n)
    throw ValidationError("weighted svm: row count mismatch across features/labels/weights");
  if (n == 0) throw ValidationError("weighted svm: empty problem");
  if (!(mu > 0.0)) throw ValidationError("weighted svm: mu must be positive");
  if (!features.allFinite()) throw ValidationError("weighted svm: non-finite feature values");
  double pos_weight = 0.0, neg_weight = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 1 && labels[i] != -1)
      throw ValidationError("weighted svm: labels must be +1 or -1");
    if (!(weights[i] >= 0.0))
      throw ValidationError("weighted svm: negative or non-finite weight at sample " +
                            std::to_string(i));
    (labels[i] == 1 ? pos_weight : neg_weight) += weights[i];
  }
  if (pos_weight <= 0.0)
    throw ValidationError("weighted svm: all weights in the +1 class are zero");
  if (neg_weight <= 0.0)
    throw ValidationError("weighted svm: all weights in the -1 class are zero");
}

double weighted_hinge_objective(const WeightedProblem& problem, const Hyperplane& h) {
  const Eigen::VectorXd d =
      (problem.features * h.w).array() + h.b;
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < problem.features.rows(); ++i) {
    hinge += problem.weights[i] * std::max(0.0, 1.0 - problem.labels[i] * d[i]);
  }
  return 0.5 * h.w.squaredNorm() + problem.mu * hinge;
}

namespace {

// primal of the augmented problem at v (= [w; b/scale])
double augmented_primal(const WeightedProblem& prob, const Eigen::VectorXd& v) {
  const Eigen::Index p = prob.features.cols();
  const Eigen::VectorXd margins =
      (prob.features * v.head(p)).array() + kBiasFeatureScale * v[p];
  double hinge = 0.0;
  for (Eigen::Index i = 0; i < prob.features.rows(); ++i)
    hinge += prob.weights[i] * std::max(0.0, 1.0 - prob.labels[i] * margins[i]);
  return 0.5 * v.squaredNorm() + prob.mu * hinge;
}

}  // namespace

SvmResult solve_weighted_svm(const WeightedProblem& problem, double tol, int max_iter) {
  problem.validate();
  if (!(tol > 0.0)) throw ValidationError("weighted svm: tol must be positive");
  if (max_iter < 1) throw ValidationError("weighted svm: max_iter must be >= 1");

  const Eigen::Index n = problem.features.rows();
  const Eigen::Index p = problem.features.cols();

  Eigen::VectorXd upper(n);   // box bound per dual variable
  Eigen::VectorXd qdiag(n);   // ||x_i||^2 + scale^2
  for (Eigen::Index i = 0; i < n; ++i) {
    upper[i] = problem.mu * problem.weights[i];
    qdiag[i] = problem.features.row(i).squaredNorm() + kBiasFeatureScale * kBiasFeatureScale;
  }

  Eigen::VectorXd alpha = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(p + 1);  // sum_i alpha_i y_i [x_i; scale]

  SvmResult result;
  double primal = augmented_primal(problem, v);
  double dual = 0.0;
  result.primal_trace.push_back(primal);
  result.dual_trace.push_back(dual);

  for (int sweep = 1; sweep <= max_iter; ++sweep) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (upper[i] <= 0.0) continue;  // zero-weight samples never enter
      const double y = static_cast<double>(problem.labels[i]);
      const double margin = problem.features.row(i).dot(v.head(p)) + kBiasFeatureScale * v[p];
      const double grad = y * margin - 1.0;
      const double next = std::min(std::max(alpha[i] - grad / qdiag[i], 0.0), upper[i]);
      const double delta = next - alpha[i];
      if (delta != 0.0) {
        v.head(p) += delta * y * problem.features.row(i).transpose();
        v[p] += delta * y * kBiasFeatureScale;
        alpha[i] = next;
      }
    }
    primal = augmented_primal(problem, v);
    dual = alpha.sum() - 0.5 * v.squaredNorm();
    result.primal_trace.push_back(primal);
    result.dual_trace.push_back(dual);
    result.sweeps = sweep;
    if (primal - dual <= tol * std::max(1.0, std::abs(primal))) {
      result.converged = true;
      break;
    }
  }

  result.plane.w = v.head(p);
  result.plane.b = kBiasFeatureScale * v[p];
  result.objective = weighted_hinge_objective(problem, result.plane);
  result.dual_objective = dual;
  result.gap = primal - dual;
  return result;
}

}  // namespace subtyper
