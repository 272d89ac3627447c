#ifndef SUBTYPER_VALIDATION_HPP
#define SUBTYPER_VALIDATION_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "subtyper/baselines.hpp"
#include "subtyper/cohort.hpp"

namespace subtyper {

// pair-counting adjusted Rand index; 1 when the partitions agree up to
// relabeling, ~0 for independent partitions
double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b);

enum class ShiftDirection { decrease, increase, mixed };

ShiftDirection direction_from_string(const std::string& name);
std::string direction_to_string(ShiftDirection direction);

struct SimSpec {
  int k_planted = 2;
  double effect_size = 1.0;     // in units of the control standard deviation
  double affected_fraction = 0.2;
  double overlap = 0.0;         // fraction of affected features shared between subtypes
  ShiftDirection direction = ShiftDirection::decrease;
  int n_controls = 100;
  int n_patients = 100;
  int p = 50;
  std::uint64_t seed = 0;
};

struct SimulatedCohort {
  Cohort cohort;               // controls first, then patients
  std::vector<int> planted;    // subtype per patient row, 0-based
  std::vector<std::vector<int>> affected_sets;  // feature indices per subtype
};

// Controls are standard normal per feature; each patient is a fresh standard
// normal draw shifted by +/- effect_size on its subtype's affected feature set.
SimulatedCohort generate_semi_simulated(const SimSpec& spec);

enum class Method { hydra, magic, chimera, kmeans, hierarchical, nmf };

Method method_from_string(const std::string& name);
std::string method_to_string(Method method);

struct MethodOptions {
  double mu = 1.0;
  int n_restarts = 5;
  int max_alternations = 50;
  double svm_tol = 1e-6;
  int svm_max_iter = 10000;
  Linkage linkage = Linkage::ward;
  std::vector<int> scales;  // magic only; empty = default schedule
  int max_iter = 500;       // chimera EM / kmeans budget
  double tol = 1e-8;
  int jobs = 1;
};

// A fitted clustering with an out-of-sample assignment rule, so stability
// procedures can cross-assign between fits regardless of the method.
struct MethodFit {
  std::vector<int> labels;  // subtype per patient row of the fitting cohort
  bool converged = true;
  std::function<std::vector<int>(const Cohort&)> assign;  // labels for another cohort's patients
};

MethodFit fit_method(const Cohort& cohort, Method method, int k, std::uint64_t seed,
                     const MethodOptions& options);

struct KStability {
  int k = 0;
  std::optional<double> mean_ari;    // absent when fewer than two resamples succeeded
  std::optional<double> dispersion;  // sample sd of the pairwise ARIs; absent below 2 values
  int n_failed = 0;
  int n_resamples = 0;
};

struct StabilityReport {
  std::vector<KStability> per_k;
  std::optional<int> selected_k;  // argmax mean ARI, ties to the smaller k
};

// Stability scan: for each k, fit on seeded patient subsamples (all controls
// kept) and score the mean pairwise ARI on the patients the subsamples share.
// A k is skipped when more than half of its resample fits fail.
StabilityReport scan_k(const Cohort& cohort, Method method, const std::vector<int>& k_values,
                       int n_resamples, double subsample_fraction, std::uint64_t seed,
                       const MethodOptions& options);

// For each split, fit both patient halves independently (sharing controls),
// assign each half with the other half's model, and report the agreement —
// two ARI values per split.
std::vector<double> split_half_reproducibility(const Cohort& cohort, Method method, int k,
                                               int n_splits, std::uint64_t seed,
                                               const MethodOptions& options);

struct PermutationResult {
  double observed = 0.0;          // mean stability ARI at k on the true labels
  std::vector<double> null_stats;
  double p_value = 1.0;           // (1 + #{null >= observed}) / (1 + n_perm)
};

// Null model: shuffle the patient/control labels over all samples and
// recompute the stability statistic.
PermutationResult permutation_test(const Cohort& cohort, Method method, int k, int n_perm,
                                   std::uint64_t seed, const MethodOptions& options,
                                   int n_resamples = 5, double subsample_fraction = 0.8);

}  // namespace subtyper

#endif
