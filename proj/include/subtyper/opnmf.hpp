#ifndef SUBTYPER_OPNMF_HPP
#define SUBTYPER_OPNMF_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace subtyper {

// Non-negative component matrix at one granularity. Samples are columns here
// (features x samples), matching the factorization X ~ C * (C^T X).
struct ScaleBasis {
  Eigen::MatrixXd C;  // p x r, columns unit-norm and near-orthogonal at convergence
  int r = 0;
};

struct OpnmfResult {
  ScaleBasis basis;
  std::vector<double> error_trace;  // ||X - C C^T X||_F^2 per iteration, non-increasing
  bool converged = false;
  int iterations = 0;
};

// Projective NMF by multiplicative updates: C <- C . (XX^T C) / (C C^T XX^T C).
// A convex-blend backtrack keeps the recorded error trace non-increasing;
// columns are normalized once at the end.
OpnmfResult fit_opnmf(const Eigen::MatrixXd& X, int r, std::uint64_t seed, int max_iter = 2000,
                      double tol = 1e-6);

// loadings L = C^T X for samples in columns
Eigen::MatrixXd project(const ScaleBasis& basis, const Eigen::MatrixXd& X);

// per-sample argmax over component loadings, ties to the lowest component
std::vector<int> cluster_by_loading(const ScaleBasis& basis, const Eigen::MatrixXd& X);

}  // namespace subtyper

#endif
