#include "subtyper/validation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <utility>

#include "subtyper/chimera.hpp"
#include "subtyper/common.hpp"
#include "subtyper/hydra.hpp"
#include "subtyper/magic.hpp"
#include "subtyper/opnmf.hpp"

namespace subtyper {

double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw ValidationError("adjusted_rand_index: length mismatch");
  if (a.size() < 2) throw ValidationError("adjusted_rand_index: need at least 2 samples");

  std::map<std::pair<int, int>, long long> cells;
  std::map<int, long long> row_sums;
  std::map<int, long long> col_sums;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cells[{a[i], b[i]}];
    ++row_sums[a[i]];
    ++col_sums[b[i]];
  }
  // all-integer pair counting; the one division at the end keeps exact cases
  // (identical partitions, the crossed 4-sample fixture) exact in doubles
  auto comb2 = [](long long x) { return x * (x - 1) / 2; };
  __int128 index = 0;
  for (const auto& [cell, count] : cells) index += comb2(count);
  __int128 sum_rows = 0;
  for (const auto& [id, count] : row_sums) sum_rows += comb2(count);
  __int128 sum_cols = 0;
  for (const auto& [id, count] : col_sums) sum_cols += comb2(count);
  const __int128 total_pairs = comb2(static_cast<long long>(a.size()));
  // ARI = (index - sr*sc/T) / ((sr+sc)/2 - sr*sc/T), scaled through by 2T
  const __int128 numerator = 2 * total_pairs * index - 2 * sum_rows * sum_cols;
  const __int128 denominator = total_pairs * (sum_rows + sum_cols) - 2 * sum_rows * sum_cols;
  if (denominator == 0) return 1.0;  // both partitions degenerate and equal in structure
  return static_cast<double>(numerator) / static_cast<double>(denominator);
}

ShiftDirection direction_from_string(const std::string& name) {
  if (name == "decrease") return ShiftDirection::decrease;
  if (name == "increase") return ShiftDirection::increase;
  if (name == "mixed") return ShiftDirection::mixed;
  throw ValidationError("unknown direction '" + name +
                        "' (expected decrease, increase, or mixed)");
}

std::string direction_to_string(ShiftDirection direction) {
  switch (direction) {
    case ShiftDirection::decrease: return "decrease";
    case ShiftDirection::increase: return "increase";
    case ShiftDirection::mixed: return "mixed";
  }
  throw std::logic_error("unreachable");
}

SimulatedCohort generate_semi_simulated(const SimSpec& spec) {
  if (spec.k_planted < 1) throw ValidationError("simulate: k_planted must be at least 1");
  if (spec.effect_size < 0.0) throw ValidationError("simulate: effect_size must be >= 0");
  if (spec.overlap < 0.0 || spec.overlap > 1.0) {
    throw ValidationError("simulate: overlap must lie in [0, 1]");
  }
  if (spec.p < 1 || spec.n_controls < 1 || spec.n_patients < 1) {
    throw ValidationError("simulate: p, n_controls and n_patients must be positive");
  }
  const int affected = static_cast<int>(std::lround(spec.affected_fraction * spec.p));
  if (affected < 1) {
    throw ValidationError("simulate: affected_fraction * p must be at least 1");
  }
  const int shared = static_cast<int>(std::lround(spec.overlap * affected));
  const int exclusive = affected - shared;
  if (shared + spec.k_planted * exclusive > spec.p) {
    throw ValidationError(
        "simulate: affected sets do not fit: overlap block + k exclusive blocks exceed p");
  }

  SimulatedCohort out;
  out.affected_sets.resize(static_cast<std::size_t>(spec.k_planted));
  for (int j = 0; j < spec.k_planted; ++j) {
    auto& set = out.affected_sets[static_cast<std::size_t>(j)];
    for (int f = 0; f < shared; ++f) set.push_back(f);
    const int start = shared + j * exclusive;
    for (int f = start; f < start + exclusive; ++f) set.push_back(f);
  }

  const int n = spec.n_controls + spec.n_patients;
  Cohort& cohort = out.cohort;
  cohort.features.resize(n, spec.p);
  cohort.labels.resize(n);
  cohort.covariates.resize(n, 0);
  cohort.sample_ids.reserve(static_cast<std::size_t>(n));
  for (int j = 0; j < spec.p; ++j) cohort.feature_names.push_back("f_" + std::to_string(j + 1));

  Rng rng(spec.seed);
  for (int i = 0; i < spec.n_controls; ++i) {
    cohort.sample_ids.push_back("cn_" + std::to_string(i + 1));
    cohort.labels[i] = -1;
    for (int j = 0; j < spec.p; ++j) cohort.features(i, j) = rng.normal();
  }
  out.planted.reserve(static_cast<std::size_t>(spec.n_patients));
  for (int i = 0; i < spec.n_patients; ++i) {
    const int row = spec.n_controls + i;
    const int subtype = i % spec.k_planted;
    out.planted.push_back(subtype);
    cohort.sample_ids.push_back("pt_" + std::to_string(i + 1));
    cohort.labels[row] = 1;
    for (int j = 0; j < spec.p; ++j) cohort.features(row, j) = rng.normal();
    const auto& set = out.affected_sets[static_cast<std::size_t>(subtype)];
    for (std::size_t pos = 0; pos < set.size(); ++pos) {
      double shift = spec.effect_size;
      switch (spec.direction) {
        case ShiftDirection::decrease: shift = -spec.effect_size; break;
        case ShiftDirection::increase: shift = spec.effect_size; break;
        case ShiftDirection::mixed:
          shift = (pos % 2 == 0) ? spec.effect_size : -spec.effect_size;
          break;
      }
      cohort.features(row, set[pos]) += shift;
    }
  }
  cohort.validate();
  return out;
}

Method method_from_string(const std::string& name) {
  if (name == "hydra") return Method::hydra;
  if (name == "magic") return Method::magic;
  if (name == "chimera") return Method::chimera;
  if (name == "kmeans") return Method::kmeans;
  if (name == "hierarchical") return Method::hierarchical;
  if (name == "nmf") return Method::nmf;
  throw ValidationError("unknown method '" + name +
                        "' (expected hydra, magic, chimera, kmeans, hierarchical, or nmf)");
}

std::string method_to_string(Method method) {
  switch (method) {
    case Method::hydra: return "hydra";
    case Method::magic: return "magic";
    case Method::chimera: return "chimera";
    case Method::kmeans: return "kmeans";
    case Method::hierarchical: return "hierarchical";
    case Method::nmf: return "nmf";
  }
  throw std::logic_error("unreachable");
}

namespace {

Eigen::MatrixXd cluster_centroids(const Eigen::MatrixXd& X, const std::vector<int>& labels,
                                  int k) {
  Eigen::MatrixXd centroids = Eigen::MatrixXd::Zero(k, X.cols());
  Eigen::VectorXd sizes = Eigen::VectorXd::Zero(k);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    centroids.row(labels[static_cast<std::size_t>(i)]) += X.row(i);
    sizes[labels[static_cast<std::size_t>(i)]] += 1.0;
  }
  for (int j = 0; j < k; ++j) {
    if (sizes[j] > 0.0) centroids.row(j) /= sizes[j];
  }
  return centroids;
}

}  // namespace

MethodFit fit_method(const Cohort& cohort, Method method, int k, std::uint64_t seed,
                     const MethodOptions& options) {
  MethodFit out;
  switch (method) {
    case Method::hydra: {
      HydraConfig cfg;
      cfg.k = k;
      cfg.mu = options.mu;
      cfg.n_restarts = options.n_restarts;
      cfg.max_alternations = options.max_alternations;
      cfg.seed = seed;
      cfg.svm_tol = options.svm_tol;
      cfg.svm_max_iter = options.svm_max_iter;
      cfg.jobs = options.jobs;
      HydraFit fit = fit_hydra(cohort, cfg);
      out.labels = membership_labels(fit.S);
      out.converged = fit.converged;
      out.assign = [poly = fit.polytope](const Cohort& target) {
        return membership_labels(assign_membership(poly, target.patient_features()));
      };
      break;
    }
    case Method::magic: {
      MagicConfig cfg;
      cfg.k = k;
      cfg.scales = options.scales;
      cfg.hydra.mu = options.mu;
      cfg.hydra.n_restarts = options.n_restarts;
      cfg.hydra.max_alternations = options.max_alternations;
      cfg.hydra.seed = seed;
      cfg.hydra.svm_tol = options.svm_tol;
      cfg.hydra.svm_max_iter = options.svm_max_iter;
      cfg.consensus_seed = derive_seed(seed, 0xc0ull);
      cfg.jobs = options.jobs;
      MagicResult fit = fit_magic(cohort, cfg);
      out.labels = fit.labels;
      out.converged = fit.converged;
      out.assign = [centroids = fit.centroids](const Cohort& target) {
        return nearest_centroid_labels(target.patient_features(), centroids);
      };
      break;
    }
    case Method::chimera: {
      ChimeraFit fit = fit_chimera(cohort, k, seed, options.max_iter, options.tol);
      out.labels = assign_chimera(fit.model, cohort.patient_features(),
                                  cohort.control_features());
      out.converged = fit.converged;
      out.assign = [model = fit.model, controls = cohort.control_features()](
                       const Cohort& target) {
        return assign_chimera(model, target.patient_features(), controls);
      };
      break;
    }
    case Method::kmeans: {
      KmeansResult fit = kmeans(cohort.patient_features(), k, seed,
                                std::min(options.max_iter, 100), options.n_restarts);
      out.labels = fit.labels;
      out.converged = fit.converged;
      out.assign = [centroids = fit.centroids](const Cohort& target) {
        return nearest_centroid_labels(target.patient_features(), centroids);
      };
      break;
    }
    case Method::hierarchical: {
      const Eigen::MatrixXd patients = cohort.patient_features();
      Dendrogram dendro = hierarchical(patients, options.linkage);
      out.labels = cut_dendrogram(dendro, k);
      const Eigen::MatrixXd centroids = cluster_centroids(patients, out.labels, k);
      out.assign = [centroids](const Cohort& target) {
        return nearest_centroid_labels(target.patient_features(), centroids);
      };
      break;
    }
    case Method::nmf: {
      const Eigen::MatrixXd patients_t = cohort.patient_features().transpose();
      OpnmfResult fit = fit_opnmf(patients_t, k, seed);
      out.labels = cluster_by_loading(fit.basis, patients_t);
      out.converged = fit.converged;
      out.assign = [basis = fit.basis](const Cohort& target) {
        return cluster_by_loading(basis, target.patient_features().transpose());
      };
      break;
    }
  }
  return out;
}

namespace {

struct ResampleFit {
  std::vector<Eigen::Index> patient_subset;  // ascending positions into the patient list
  std::vector<int> labels;                   // one per subset entry
  bool ok = false;
};

ResampleFit fit_on_subsample(const Cohort& cohort, Method method, int k,
                             const MethodOptions& options, double subsample_fraction,
                             std::uint64_t draw_seed, std::uint64_t fit_seed) {
  const auto patients = cohort.patient_rows();
  const auto controls = cohort.control_rows();
  const std::size_t m = patients.size();
  std::size_t count = static_cast<std::size_t>(std::floor(subsample_fraction * m));
  count = std::min(std::max<std::size_t>(count, 1), m);

  std::vector<Eigen::Index> order(m);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(draw_seed);
  rng.shuffle(order);
  order.resize(count);
  std::sort(order.begin(), order.end());

  ResampleFit out;
  out.patient_subset = order;
  std::vector<Eigen::Index> rows(controls.begin(), controls.end());
  for (Eigen::Index pos : order) rows.push_back(patients[static_cast<std::size_t>(pos)]);
  try {
    const Cohort sub = cohort.subset_rows(rows);
    MethodFit fit = fit_method(sub, method, k, fit_seed, options);
    out.labels = std::move(fit.labels);
    out.ok = true;
  } catch (const std::exception&) {
    out.ok = false;
  }
  return out;
}

// mean pairwise ARI over the patients shared between subsample fits
std::pair<std::optional<double>, std::optional<double>> pairwise_stability(
    const std::vector<ResampleFit>& fits) {
  std::vector<double> aris;
  for (std::size_t a = 0; a < fits.size(); ++a) {
    if (!fits[a].ok) continue;
    for (std::size_t b = a + 1; b < fits.size(); ++b) {
      if (!fits[b].ok) continue;
      std::vector<int> la;
      std::vector<int> lb;
      std::size_t ia = 0;
      std::size_t ib = 0;
      while (ia < fits[a].patient_subset.size() && ib < fits[b].patient_subset.size()) {
        const Eigen::Index pa = fits[a].patient_subset[ia];
        const Eigen::Index pb = fits[b].patient_subset[ib];
        if (pa == pb) {
          la.push_back(fits[a].labels[ia]);
          lb.push_back(fits[b].labels[ib]);
          ++ia;
          ++ib;
        } else if (pa < pb) {
          ++ia;
        } else {
          ++ib;
        }
      }
      if (la.size() < 2) continue;
      aris.push_back(adjusted_rand_index(la, lb));
    }
  }
  if (aris.empty()) return {std::nullopt, std::nullopt};
  const double mean = std::accumulate(aris.begin(), aris.end(), 0.0) /
                      static_cast<double>(aris.size());
  std::optional<double> dispersion;
  if (aris.size() >= 2) {
    double ss = 0.0;
    for (double v : aris) ss += (v - mean) * (v - mean);
    dispersion = std::sqrt(ss / static_cast<double>(aris.size() - 1));
  }
  return {mean, dispersion};
}

KStability stability_at_k(const Cohort& cohort, Method method, int k, int n_resamples,
                          double subsample_fraction, std::uint64_t seed,
                          const MethodOptions& options) {
  KStability out;
  out.k = k;
  out.n_resamples = n_resamples;
  std::vector<ResampleFit> fits(static_cast<std::size_t>(n_resamples));
  for (int r = 0; r < n_resamples; ++r) {
    const std::uint64_t draw_seed = derive_seed(seed, 2 * static_cast<std::uint64_t>(r));
    const std::uint64_t fit_seed = derive_seed(seed, 2 * static_cast<std::uint64_t>(r) + 1);
    fits[static_cast<std::size_t>(r)] =
        fit_on_subsample(cohort, method, k, options, subsample_fraction, draw_seed, fit_seed);
    if (!fits[static_cast<std::size_t>(r)].ok) ++out.n_failed;
  }
  if (2 * out.n_failed > n_resamples) return out;  // skipped: too many failures
  auto [mean, dispersion] = pairwise_stability(fits);
  out.mean_ari = mean;
  out.dispersion = dispersion;
  return out;
}

}  // namespace

StabilityReport scan_k(const Cohort& cohort, Method method, const std::vector<int>& k_values,
                       int n_resamples, double subsample_fraction, std::uint64_t seed,
                       const MethodOptions& options) {
  cohort.validate();
  if (k_values.empty()) throw ValidationError("scan_k: no k values supplied");
  if (n_resamples < 1) throw ValidationError("scan_k: n_resamples must be at least 1");
  if (subsample_fraction <= 0.0 || subsample_fraction > 1.0) {
    throw ValidationError("scan_k: subsample_fraction must lie in (0, 1]");
  }

  StabilityReport report;
  for (int k : k_values) {
    const std::uint64_t k_seed = derive_seed(seed, static_cast<std::uint64_t>(k));
    report.per_k.push_back(
        stability_at_k(cohort, method, k, n_resamples, subsample_fraction, k_seed, options));
  }
  double best_mean = 0.0;
  for (const KStability& entry : report.per_k) {
    if (!entry.mean_ari) continue;
    const bool better = !report.selected_k || *entry.mean_ari > best_mean ||
                        (*entry.mean_ari == best_mean && entry.k < *report.selected_k);
    if (better) {
      report.selected_k = entry.k;
      best_mean = *entry.mean_ari;
    }
  }
  return report;
}

std::vector<double> split_half_reproducibility(const Cohort& cohort, Method method, int k,
                                               int n_splits, std::uint64_t seed,
                                               const MethodOptions& options) {
  cohort.validate();
  if (n_splits < 1) throw ValidationError("split_half: n_splits must be at least 1");
  const auto patients = cohort.patient_rows();
  const auto controls = cohort.control_rows();
  if (static_cast<int>(patients.size()) < 2 * k) {
    throw ValidationError("split_half: need at least 2k patients");
  }

  std::vector<double> aris;
  for (int s = 0; s < n_splits; ++s) {
    std::vector<Eigen::Index> order(patients.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 3 * static_cast<std::uint64_t>(s)));
    rng.shuffle(order);
    const std::size_t half = patients.size() / 2;
    std::vector<Eigen::Index> first(order.begin(), order.begin() + half);
    std::vector<Eigen::Index> second(order.begin() + half, order.end());
    std::sort(first.begin(), first.end());
    std::sort(second.begin(), second.end());

    auto make_half = [&](const std::vector<Eigen::Index>& positions) {
      std::vector<Eigen::Index> rows(controls.begin(), controls.end());
      for (Eigen::Index pos : positions) rows.push_back(patients[static_cast<std::size_t>(pos)]);
      return cohort.subset_rows(rows);
    };
    try {
      const Cohort cohort_a = make_half(first);
      const Cohort cohort_b = make_half(second);
      MethodFit fit_a = fit_method(cohort_a, method, k,
                                   derive_seed(seed, 3 * static_cast<std::uint64_t>(s) + 1),
                                   options);
      MethodFit fit_b = fit_method(cohort_b, method, k,
                                   derive_seed(seed, 3 * static_cast<std::uint64_t>(s) + 2),
                                   options);
      aris.push_back(adjusted_rand_index(fit_a.labels, fit_b.assign(cohort_a)));
      aris.push_back(adjusted_rand_index(fit_b.labels, fit_a.assign(cohort_b)));
    } catch (const std::exception&) {
      continue;  // failed split contributes nothing
    }
  }
  return aris;
}

PermutationResult permutation_test(const Cohort& cohort, Method method, int k, int n_perm,
                                   std::uint64_t seed, const MethodOptions& options,
                                   int n_resamples, double subsample_fraction) {
  cohort.validate();
  if (n_perm < 19) throw ValidationError("permutation_test: n_perm must be at least 19");

  auto statistic = [&](const Cohort& c, std::uint64_t stat_seed) {
    const KStability stab =
        stability_at_k(c, method, k, n_resamples, subsample_fraction, stat_seed, options);
    if (!stab.mean_ari) {
      throw FitError("permutation_test: stability statistic unavailable (too many fit failures)");
    }
    return *stab.mean_ari;
  };

  PermutationResult out;
  out.observed = statistic(cohort, derive_seed(seed, 0));
  int at_least = 0;
  for (int i = 0; i < n_perm; ++i) {
    Cohort shuffled = cohort;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(cohort.labels.size()));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, 1000 + static_cast<std::uint64_t>(i)));
    rng.shuffle(order);
    for (std::size_t j = 0; j < order.size(); ++j) {
      shuffled.labels[static_cast<Eigen::Index>(j)] = cohort.labels[order[j]];
    }
    const double stat = statistic(shuffled, derive_seed(seed, 2000 + static_cast<std::uint64_t>(i)));
    out.null_stats.push_back(stat);
    if (stat >= out.observed) ++at_least;
  }
  out.p_value = (1.0 + at_least) / (1.0 + n_perm);
  return out;
}

}  // namespace subtyper
