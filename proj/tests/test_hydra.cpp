#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <vector>

#include "subtyper/common.hpp"
#include "subtyper/hydra.hpp"
#include "subtyper/validation.hpp"

using namespace subtyper;

namespace {

// Naive reference for the objective: double loop over faces and samples, no
// vectorization, summation in the plain order of the definition.
double naive_objective(const Polytope& poly, const Cohort& cohort, const Eigen::MatrixXd& S,
                       double mu) {
  const int k = poly.k();
  double total = 0.0;
  for (int j = 0; j < k; ++j) {
    total += 0.5 * poly.faces[j].w.squaredNorm();
    double hinge = 0.0;
    for (Eigen::Index i = 0; i < cohort.n_samples(); ++i) {
      const double d = poly.faces[j].w.dot(cohort.features.row(i)) + poly.faces[j].b;
      if (cohort.labels[i] == -1) {
        hinge += (1.0 / k) * std::max(0.0, 1.0 + d);
      }
    }
    const Eigen::MatrixXd patients = cohort.patient_features();
    for (Eigen::Index i = 0; i < patients.rows(); ++i) {
      const double d = poly.faces[j].w.dot(patients.row(i)) + poly.faces[j].b;
      hinge += S(i, j) * std::max(0.0, 1.0 - d);
    }
    total += mu * hinge;
  }
  return total;
}

Cohort planted_cohort(std::uint64_t seed, int n_controls, int n_patients, int p,
                      double effect, std::vector<int>* truth = nullptr) {
  SimSpec spec;
  spec.k_planted = 2;
  spec.effect_size = effect;
  spec.affected_fraction = 0.2;
  spec.overlap = 0.0;
  spec.n_controls = n_controls;
  spec.n_patients = n_patients;
  spec.p = p;
  spec.seed = seed;
  SimulatedCohort sim = generate_semi_simulated(spec);
  if (truth) *truth = sim.planted;
  return sim.cohort;
}

Polytope make_polytope(const std::vector<std::pair<Eigen::VectorXd, double>>& faces) {
  Polytope poly;
  for (const auto& [w, b] : faces) poly.faces.push_back({w, b});
  return poly;
}

}  // namespace

TEST_CASE("membership is the one-hot argmax of face decision values") {
  Eigen::VectorXd w1(1), w2(1);
  w1 << 1.0;
  w2 << -1.0;

  SUBCASE("distinct decision values pick the larger face") {
    const Polytope poly = make_polytope({{w1, 0.0}, {w2, 0.0}});
    Eigen::MatrixXd patients(1, 1);
    patients << 2.0;  // d = (2, -2)
    const Eigen::MatrixXd S = assign_membership(poly, patients);
    CHECK(S(0, 0) == 1.0);
    CHECK(S(0, 1) == 0.0);
  }
  SUBCASE("exact ties go to the lowest face index") {
    const Polytope poly = make_polytope({{w1, 0.0}, {w1, 0.0}});
    Eigen::MatrixXd patients(1, 1);
    patients << 1.0;  // d = (1, 1)
    const Eigen::MatrixXd S = assign_membership(poly, patients);
    CHECK(S(0, 0) == 1.0);
    CHECK(S(0, 1) == 0.0);
  }
  SUBCASE("k = 1 puts every patient on the single face") {
    const Polytope poly = make_polytope({{w1, 0.5}});
    Eigen::MatrixXd patients(3, 1);
    patients << -5.0, 0.0, 5.0;
    const Eigen::MatrixXd S = assign_membership(poly, patients);
    CHECK(S.col(0).sum() == 3.0);
  }
}

TEST_CASE("membership labels round-trip through one-hot form") {
  const std::vector<int> labels = {2, 0, 1, 1, 0};
  const Eigen::MatrixXd S = membership_from_labels(labels, 3);
  CHECK(S.rows() == 5);
  CHECK(S.cols() == 3);
  CHECK((S.rowwise().sum().array() == 1.0).all());
  CHECK(membership_labels(S) == labels);
}

TEST_CASE("zero polytope objective is mu times the total hinge mass") {
  const Cohort cohort = planted_cohort(1, 10, 15, 4, 1.0);
  const int k = 3;
  Polytope poly;
  for (int j = 0; j < k; ++j) poly.faces.push_back({Eigen::VectorXd::Zero(4), 0.0});
  Eigen::MatrixXd S = Eigen::MatrixXd::Zero(15, k);
  for (Eigen::Index i = 0; i < 15; ++i) S(i, i % k) = 1.0;
  // every decision value is 0: each control contributes k * (1/k) * 1, each
  // patient contributes its single S entry of 1
  const double mu = 2.5;
  CHECK(hydra_objective(poly, cohort, S, mu) ==
        doctest::Approx(mu * (10.0 + 15.0)).epsilon(1e-12));
}

TEST_CASE("objective reduces to the regularizer when all margins clear one") {
  Cohort cohort;
  cohort.features.resize(4, 1);
  cohort.features << -3.0, -4.0, 3.0, 4.0;  // controls far left, patients far right
  cohort.labels.resize(4);
  cohort.labels << -1, -1, 1, 1;
  cohort.covariates.resize(4, 0);
  cohort.sample_ids = {"c1", "c2", "p1", "p2"};
  cohort.feature_names = {"f"};

  Eigen::VectorXd w(1);
  w << 1.0;
  const Polytope poly = make_polytope({{w, 0.0}});
  Eigen::MatrixXd S = Eigen::MatrixXd::Ones(2, 1);
  CHECK(hydra_objective(poly, cohort, S, 5.0) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("objective matches the naive double-loop reference") {
  Rng rng(99);
  const Cohort cohort = planted_cohort(7, 12, 18, 5, 1.0);
  for (int k : {1, 2, 3}) {
    Polytope poly;
    for (int j = 0; j < k; ++j) {
      Eigen::VectorXd w(5);
      for (int t = 0; t < 5; ++t) w[t] = rng.normal();
      poly.faces.push_back({w, rng.normal()});
    }
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(18, k);
    for (Eigen::Index i = 0; i < 18; ++i) S(i, static_cast<int>(rng.uniform_index(k))) = 1.0;
    const double mu = 0.5 + rng.uniform01();
    CHECK(hydra_objective(poly, cohort, S, mu) ==
          doctest::Approx(naive_objective(poly, cohort, S, mu)).epsilon(1e-12));
  }
}

TEST_CASE("k = 1 reduces to a single weighted svm") {
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    const Cohort cohort = planted_cohort(seed, 20, 20, 6, 1.0);
    HydraConfig cfg;
    cfg.k = 1;
    cfg.seed = seed;
    cfg.n_restarts = 1;
    cfg.svm_tol = 1e-8;
    const HydraFit fit = fit_hydra(cohort, cfg);
    REQUIRE(fit.polytope.k() == 1);

    WeightedProblem prob;
    prob.features = cohort.features;
    prob.labels = cohort.labels;
    prob.weights = Eigen::VectorXd::Ones(cohort.n_samples());
    prob.mu = cfg.mu;
    const SvmResult svm = solve_weighted_svm(prob, 1e-8);

    for (Eigen::Index i = 0; i < cohort.n_samples(); ++i) {
      const double d_hydra = decision_value(fit.polytope.faces[0],
                                            cohort.features.row(i).transpose());
      const double d_svm = decision_value(svm.plane, cohort.features.row(i).transpose());
      CHECK(std::abs(d_hydra - d_svm) < 1e-6);
    }
    CHECK(fit.objective == doctest::Approx(svm.objective).epsilon(1e-6));
  }
}

TEST_CASE("planted two-subtype structure is recovered") {
  std::vector<int> truth;
  const Cohort cohort = planted_cohort(11, 100, 100, 50, 1.5, &truth);
  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 11;
  cfg.jobs = 2;
  const HydraFit fit = fit_hydra(cohort, cfg);
  CHECK(fit.converged);
  CHECK(adjusted_rand_index(membership_labels(fit.S), truth) >= 0.8);
}

TEST_CASE("duplicated patients always land in the same cluster") {
  std::vector<int> truth;
  Cohort cohort = planted_cohort(13, 30, 30, 10, 1.5, &truth);
  // duplicate the first patient row as a new patient
  const Eigen::Index first_patient = cohort.patient_rows().front();
  const Eigen::Index n = cohort.n_samples();
  cohort.features.conservativeResize(n + 1, Eigen::NoChange);
  cohort.features.row(n) = cohort.features.row(first_patient);
  cohort.labels.conservativeResize(n + 1);
  cohort.labels[n] = 1;
  cohort.covariates.conservativeResize(n + 1, Eigen::NoChange);
  cohort.sample_ids.push_back("dup");

  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 3;
  const HydraFit fit = fit_hydra(cohort, cfg);
  const std::vector<int> labels = membership_labels(fit.S);
  CHECK(labels.front() == labels.back());
}

TEST_CASE("objective trace is non-increasing up to solver tolerance") {
  const Cohort cohort = planted_cohort(17, 40, 40, 10, 1.0);
  HydraConfig cfg;
  cfg.k = 3;
  cfg.seed = 5;
  cfg.n_restarts = 2;
  const HydraFit fit = fit_hydra(cohort, cfg);
  REQUIRE(fit.objective_trace.size() >= 1);
  for (std::size_t t = 1; t < fit.objective_trace.size(); ++t) {
    const double prev = fit.objective_trace[t - 1];
    CHECK(fit.objective_trace[t] <= prev + 10.0 * cfg.svm_tol * std::max(1.0, std::abs(prev)));
  }
  CHECK(fit.objective == doctest::Approx(fit.objective_trace.back()).epsilon(1e-12));
}

TEST_CASE("a converged membership is a fixed point of one more alternation") {
  const Cohort cohort = planted_cohort(19, 40, 40, 8, 1.5);
  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 7;
  const HydraFit fit = fit_hydra(cohort, cfg);
  REQUIRE(fit.converged);

  const HydraFit again = fit_hydra_from(cohort, cfg, fit.S);
  CHECK(again.converged);
  CHECK(again.S.cwiseEqual(fit.S).all());
  CHECK(again.objective == doctest::Approx(fit.objective).epsilon(1e-9));
}

TEST_CASE("permuting patient rows permutes the recovered clusters") {
  std::vector<int> truth;
  const Cohort cohort = planted_cohort(23, 40, 40, 20, 3.0, &truth);

  // permute only the patient rows (controls stay in front)
  std::vector<Eigen::Index> order(cohort.n_samples());
  for (Eigen::Index i = 0; i < cohort.n_samples(); ++i) order[i] = i;
  Rng rng(5);
  std::vector<Eigen::Index> patient_order(order.begin() + 40, order.end());
  rng.shuffle(patient_order);
  std::copy(patient_order.begin(), patient_order.end(), order.begin() + 40);
  const Cohort permuted = cohort.subset_rows(order);

  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 23;
  const std::vector<int> base = membership_labels(fit_hydra(cohort, cfg).S);
  const std::vector<int> perm = membership_labels(fit_hydra(permuted, cfg).S);

  // with a strong planted signal both runs find the same partition, so the
  // permuted labels must match the base labels carried through the permutation
  // (cluster ids may swap between runs, hence ARI rather than equality)
  std::vector<int> base_carried(perm.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    base_carried[i] = base[static_cast<std::size_t>(patient_order[i] - 40)];
  CHECK(adjusted_rand_index(base_carried, perm) == 1.0);
}

TEST_CASE("every control satisfies the margin bound implied by the objective") {
  const Cohort cohort = planted_cohort(29, 50, 50, 10, 1.5);
  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 1;
  const HydraFit fit = fit_hydra(cohort, cfg);
  const Eigen::MatrixXd controls = cohort.control_features();
  double mean_decision = 0.0;
  for (Eigen::Index i = 0; i < controls.rows(); ++i) {
    double worst = -std::numeric_limits<double>::infinity();
    for (const Hyperplane& face : fit.polytope.faces)
      worst = std::max(worst, decision_value(face, controls.row(i).transpose()));
    // each control's hinge on each face is bounded by the whole objective
    CHECK(worst <= cfg.k * fit.objective / cfg.mu - 1.0 + 1e-9);
    mean_decision += worst;
  }
  // on separable planted data the controls sit on the negative side on average
  CHECK(mean_decision / controls.rows() < 0.0);
}

TEST_CASE("restart seeds are deterministic and independent of job count") {
  const Cohort cohort = planted_cohort(31, 30, 30, 8, 1.0);
  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 9;
  cfg.n_restarts = 4;
  cfg.jobs = 1;
  const HydraFit serial = fit_hydra(cohort, cfg);
  cfg.jobs = 4;
  const HydraFit parallel = fit_hydra(cohort, cfg);
  CHECK(serial.S.cwiseEqual(parallel.S).all());
  CHECK(serial.objective == parallel.objective);
  for (int j = 0; j < 2; ++j) {
    CHECK(serial.polytope.faces[j].w == parallel.polytope.faces[j].w);
    CHECK(serial.polytope.faces[j].b == parallel.polytope.faces[j].b);
  }
}

TEST_CASE("reseed policy fills an empty cluster supplied at initialization") {
  const Cohort cohort = planted_cohort(37, 30, 30, 8, 1.5);
  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 0;
  Eigen::MatrixXd S0 = Eigen::MatrixXd::Zero(30, 2);
  S0.col(0).setOnes();  // cluster 1 starts empty
  const HydraFit fit = fit_hydra_from(cohort, cfg, S0);
  const Eigen::VectorXd sizes = fit.S.colwise().sum();
  CHECK(sizes[0] > 0.0);
  CHECK(sizes[1] > 0.0);
}

TEST_CASE("shrink policy drops an unused face instead of reseeding") {
  // patients form one tight blob: with k = 2 one face goes empty
  Cohort cohort;
  cohort.features.resize(20, 2);
  Rng rng(2);
  for (Eigen::Index i = 0; i < 10; ++i) {
    cohort.features(i, 0) = -4.0 + 0.1 * rng.normal();
    cohort.features(i, 1) = 0.1 * rng.normal();
  }
  for (Eigen::Index i = 10; i < 20; ++i) {
    cohort.features(i, 0) = 4.0 + 0.1 * rng.normal();
    cohort.features(i, 1) = 0.1 * rng.normal();
  }
  cohort.labels.resize(20);
  for (Eigen::Index i = 0; i < 20; ++i) {
    cohort.labels[i] = i < 10 ? -1 : 1;
    cohort.sample_ids.push_back("s" + std::to_string(i));
  }
  cohort.covariates.resize(20, 0);
  cohort.feature_names = {"a", "b"};

  HydraConfig cfg;
  cfg.k = 2;
  cfg.seed = 4;
  cfg.empty_cluster_policy = EmptyClusterPolicy::shrink;
  const HydraFit fit = fit_hydra(cohort, cfg);
  CHECK(fit.polytope.k() >= 1);
  CHECK(fit.S.cols() == fit.polytope.k());
  if (fit.polytope.k() < cfg.k) {
    CHECK_FALSE(fit.warnings.empty());
  }
  CHECK((fit.S.colwise().sum().array() > 0.0).all());
}

TEST_CASE("configuration validation") {
  const Cohort cohort = planted_cohort(41, 10, 10, 4, 1.0);
  HydraConfig cfg;
  SUBCASE("k below one") {
    cfg.k = 0;
    CHECK_THROWS_AS(fit_hydra(cohort, cfg), ValidationError);
  }
  SUBCASE("k above the patient count") {
    cfg.k = 11;
    CHECK_THROWS_AS(fit_hydra(cohort, cfg), ValidationError);
  }
  SUBCASE("non-positive mu") {
    cfg.mu = -1.0;
    CHECK_THROWS_AS(fit_hydra(cohort, cfg), ValidationError);
  }
  SUBCASE("membership shape mismatch in fit_hydra_from") {
    CHECK_THROWS_AS(fit_hydra_from(cohort, cfg, Eigen::MatrixXd::Ones(10, 3)),
                    ValidationError);
  }
  SUBCASE("membership that is not one-hot") {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(10, 2);
    S(0, 0) = 0.5;
    S(0, 1) = 0.5;
    for (Eigen::Index i = 1; i < 10; ++i) S(i, 0) = 1.0;
    CHECK_THROWS_AS(fit_hydra_from(cohort, cfg, S), ValidationError);
  }
  SUBCASE("cohort without controls") {
    Cohort patients_only = cohort.subset_rows(cohort.patient_rows());
    cfg.k = 2;
    CHECK_THROWS_AS(fit_hydra(patients_only, cfg), ValidationError);
  }
}
