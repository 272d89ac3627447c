#include "subtyper/chimera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "subtyper/baselines.hpp"
#include "subtyper/common.hpp"

namespace subtyper {

namespace {

constexpr double kSigmaFloor = 1e-8;
constexpr double kCollapseThreshold = 1e-12;

// squared distances from each patient to each (control + d_j) center,
// stacked as k blocks of q columns
Eigen::MatrixXd center_distances(const Eigen::MatrixXd& displacements,
                                 const Eigen::MatrixXd& patients,
                                 const Eigen::MatrixXd& controls) {
  const Eigen::Index m = patients.rows();
  const Eigen::Index q = controls.rows();
  const Eigen::Index k = displacements.rows();
  Eigen::MatrixXd d2(m, q * k);
  for (Eigen::Index j = 0; j < k; ++j) {
    const Eigen::MatrixXd centers = controls.rowwise() + displacements.row(j);
    for (Eigen::Index c = 0; c < q; ++c) {
      d2.col(j * q + c) = (patients.rowwise() - centers.row(c)).rowwise().squaredNorm();
    }
  }
  return d2;
}

struct EStep {
  Eigen::MatrixXd gamma;  // m x (q*k), rows sum to 1
  double loglik = 0.0;
};

EStep expectation(const Eigen::MatrixXd& d2, double sigma2, Eigen::Index p) {
  const Eigen::Index m = d2.rows();
  const Eigen::Index qk = d2.cols();
  const double log_norm = -std::log(static_cast<double>(qk)) -
                          0.5 * static_cast<double>(p) * std::log(2.0 * std::numbers::pi * sigma2);
  EStep out;
  out.gamma.resize(m, qk);
  for (Eigen::Index i = 0; i < m; ++i) {
    const Eigen::RowVectorXd logp = -d2.row(i) / (2.0 * sigma2);
    const double mx = logp.maxCoeff();
    const Eigen::RowVectorXd shifted = (logp.array() - mx).exp();
    const double total = shifted.sum();
    out.gamma.row(i) = shifted / total;
    out.loglik += mx + std::log(total) + log_norm;
  }
  return out;
}

struct EmOutcome {
  ChimeraModel model;
  double loglik = -std::numeric_limits<double>::infinity();
  std::vector<double> trace;
  bool converged = false;
  int iterations = 0;
};

EmOutcome run_em(const Eigen::MatrixXd& patients, const Eigen::MatrixXd& controls,
                 Eigen::MatrixXd displacements, int max_iter, double tol) {
  const Eigen::Index m = patients.rows();
  const Eigen::Index q = controls.rows();
  const Eigen::Index p = patients.cols();
  const Eigen::Index k = displacements.rows();

  EmOutcome out;
  Eigen::MatrixXd d2 = center_distances(displacements, patients, controls);
  double sigma2 = std::max(d2.rowwise().minCoeff().mean() / static_cast<double>(p), kSigmaFloor);

  double prev = -std::numeric_limits<double>::infinity();
  EStep e;
  for (int iter = 0; iter < max_iter; ++iter) {
    e = expectation(d2, sigma2, p);
    out.trace.push_back(e.loglik);
    out.iterations = iter + 1;

    // M-step: displacement = responsibility-weighted mean of (patient - control)
    for (Eigen::Index j = 0; j < k; ++j) {
      Eigen::RowVectorXd num = Eigen::RowVectorXd::Zero(p);
      double den = 0.0;
      for (Eigen::Index c = 0; c < q; ++c) {
        const Eigen::VectorXd g = e.gamma.col(j * q + c);
        const double w = g.sum();
        if (w == 0.0) continue;
        num += g.transpose() * patients - w * controls.row(c);
        den += w;
      }
      if (den > 0.0) displacements.row(j) = num / den;
    }

    d2 = center_distances(displacements, patients, controls);
    const double raw = d2.cwiseProduct(e.gamma).sum() /
                       (static_cast<double>(m) * static_cast<double>(p));
    if (!std::isfinite(raw) || raw < 0.0) throw FitError("chimera: variance update diverged");
    sigma2 = std::max(raw, kSigmaFloor);
    if (sigma2 < kCollapseThreshold) {
      throw FitError("chimera: variance collapsed below 1e-12");
    }

    if (std::abs(e.loglik - prev) <= tol * std::max(1.0, std::abs(e.loglik))) {
      out.converged = true;
      break;
    }
    prev = e.loglik;
  }

  // refresh responsibilities at the returned parameters, then fold the
  // per-control responsibilities into per-displacement ones
  e = expectation(d2, sigma2, p);
  out.trace.push_back(e.loglik);
  out.model.displacements = std::move(displacements);
  out.model.sigma2 = sigma2;
  out.model.xi.resize(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    out.model.xi.col(j) = e.gamma.middleCols(j * q, q).rowwise().sum();
  }
  out.loglik = e.loglik;
  return out;
}

}  // namespace

ChimeraFit fit_chimera(const Cohort& cohort, int k, std::uint64_t seed, int max_iter, double tol) {
  cohort.validate();
  cohort.require_both_classes();
  if (k < 1) throw ValidationError("chimera: k must be at least 1");
  if (static_cast<int>(cohort.n_patients()) < k) {
    throw ValidationError("chimera: fewer patients than clusters (m < k)");
  }
  if (max_iter < 1) throw ValidationError("chimera: max_iter must be at least 1");

  const Eigen::MatrixXd patients = cohort.patient_features();
  const Eigen::MatrixXd controls = cohort.control_features();
  const Eigen::RowVectorXd control_mean = controls.colwise().mean();
  const Eigen::MatrixXd proxies = patients.rowwise() - control_mean;  // displacement guesses

  constexpr int kRestarts = 5;
  EmOutcome best;
  bool have = false;
  for (int r = 0; r < kRestarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    Eigen::MatrixXd d0 = kmeanspp_seeds(proxies, k, rng);
    EmOutcome cur = run_em(patients, controls, std::move(d0), max_iter, tol);
    if (!have || cur.loglik > best.loglik) {
      best = std::move(cur);
      have = true;
    }
  }

  ChimeraFit fit;
  fit.model = std::move(best.model);
  fit.loglik = best.loglik;
  fit.loglik_trace = std::move(best.trace);
  fit.converged = best.converged;
  fit.iterations = best.iterations;
  return fit;
}

Eigen::MatrixXd chimera_responsibilities(const Eigen::MatrixXd& displacements, double sigma2,
                                         const Eigen::MatrixXd& patients,
                                         const Eigen::MatrixXd& controls) {
  if (patients.cols() != controls.cols() || patients.cols() != displacements.cols()) {
    throw ValidationError("chimera: feature dimension mismatch");
  }
  if (sigma2 <= 0.0) throw ValidationError("chimera: sigma2 must be positive");
  const Eigen::Index m = patients.rows();
  const Eigen::Index q = controls.rows();
  const Eigen::Index k = displacements.rows();
  const Eigen::MatrixXd d2 = center_distances(displacements, patients, controls);
  const EStep e = expectation(d2, sigma2, patients.cols());
  Eigen::MatrixXd xi(m, k);
  for (Eigen::Index j = 0; j < k; ++j) {
    xi.col(j) = e.gamma.middleCols(j * q, q).rowwise().sum();
  }
  return xi;
}

std::vector<int> assign_chimera(const ChimeraModel& model, const Eigen::MatrixXd& patients,
                                const Eigen::MatrixXd& controls) {
  const Eigen::MatrixXd xi =
      chimera_responsibilities(model.displacements, model.sigma2, patients, controls);
  std::vector<int> labels(static_cast<std::size_t>(xi.rows()), 0);
  for (Eigen::Index i = 0; i < xi.rows(); ++i) {
    Eigen::Index best = 0;
    double best_val = xi(i, 0);
    for (Eigen::Index j = 1; j < xi.cols(); ++j) {
      if (xi(i, j) > best_val) {
        best_val = xi(i, j);
        best = j;
      }
    }
    labels[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return labels;
}

}  // namespace subtyper
