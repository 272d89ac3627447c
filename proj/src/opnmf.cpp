#include "subtyper/opnmf.hpp"

#include <algorithm>
#include <cmath>

#include "subtyper/common.hpp"

namespace subtyper {

namespace {

constexpr double kDenomFloor = 1e-12;
constexpr double kEntryFloor = 1e-16;

double reconstruction_error(double trace_m, const Eigen::MatrixXd& M, const Eigen::MatrixXd& C) {
  const Eigen::MatrixXd A = C.transpose() * M * C;   // r x r
  const Eigen::MatrixXd B = C.transpose() * C;       // r x r
  return trace_m - 2.0 * A.trace() + (B * A).trace();
}

}  // namespace

OpnmfResult fit_opnmf(const Eigen::MatrixXd& X, int r, std::uint64_t seed, int max_iter,
                      double tol) {
  const Eigen::Index p = X.rows();
  const Eigen::Index n = X.cols();
  if (p == 0 || n == 0) throw ValidationError("opnmf: empty input matrix");
  if (X.minCoeff() < 0.0) throw ValidationError("opnmf: input must be non-negative");
  if (!X.allFinite()) throw ValidationError("opnmf: input contains non-finite values");
  if (r < 1) throw ValidationError("opnmf: r must be at least 1");
  if (r > std::min(p, n)) throw ValidationError("opnmf: r exceeds min(rows, cols)");

  const Eigen::MatrixXd M = X * X.transpose();  // p x p, reused every iteration
  const double trace_m = M.trace();

  Rng rng(seed);
  Eigen::MatrixXd C(p, r);
  for (Eigen::Index j = 0; j < r; ++j) {
    for (Eigen::Index i = 0; i < p; ++i) C(i, j) = rng.uniform01_open0();
    C.col(j) /= C.col(j).norm();
  }

  OpnmfResult out;
  double err = reconstruction_error(trace_m, M, C);
  out.error_trace.push_back(err);

  for (int iter = 0; iter < max_iter; ++iter) {
    const Eigen::MatrixXd MC = M * C;                       // p x r
    const Eigen::MatrixXd denom = C * (C.transpose() * MC);  // p x r
    Eigen::MatrixXd full = C;
    for (Eigen::Index j = 0; j < r; ++j) {
      for (Eigen::Index i = 0; i < p; ++i) {
        full(i, j) = std::max(
            C(i, j) * MC(i, j) / std::max(denom(i, j), kDenomFloor), kEntryFloor);
      }
    }

    // halve towards the current iterate until the error stops increasing
    Eigen::MatrixXd stepped = full;
    double new_err = reconstruction_error(trace_m, M, stepped);
    double alpha = 1.0;
    while (new_err > err * (1.0 + 1e-12) && alpha > 1e-4) {
      alpha *= 0.5;
      stepped = alpha * full + (1.0 - alpha) * C;
      new_err = reconstruction_error(trace_m, M, stepped);
    }
    if (new_err > err) {  // no descent direction left; stop at the current iterate
      out.converged = true;
      break;
    }

    C = std::move(stepped);
    out.error_trace.push_back(new_err);
    out.iterations = iter + 1;
    const double drop = err - new_err;
    err = new_err;
    if (drop <= tol * std::max(1.0, err)) {
      out.converged = true;
      break;
    }
  }

  for (Eigen::Index j = 0; j < r; ++j) {
    const double norm = C.col(j).norm();
    if (norm > 0.0) C.col(j) /= norm;
  }
  out.basis.C = std::move(C);
  out.basis.r = r;
  return out;
}

Eigen::MatrixXd project(const ScaleBasis& basis, const Eigen::MatrixXd& X) {
  if (X.rows() != basis.C.rows()) {
    throw ValidationError("opnmf: projection input has wrong feature count");
  }
  return basis.C.transpose() * X;
}

std::vector<int> cluster_by_loading(const ScaleBasis& basis, const Eigen::MatrixXd& X) {
  const Eigen::MatrixXd L = project(basis, X);
  std::vector<int> labels(static_cast<std::size_t>(L.cols()), 0);
  for (Eigen::Index j = 0; j < L.cols(); ++j) {
    Eigen::Index best = 0;
    double best_val = L(0, j);
    for (Eigen::Index i = 1; i < L.rows(); ++i) {
      if (L(i, j) > best_val) {
        best_val = L(i, j);
        best = i;
      }
    }
    labels[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace subtyper
