// subtyper: semi-supervised patient-subtype discovery from control/patient cohorts.
// Subcommands: fit, assign, simulate, scan-k, validate. Every run is fully
// determined by its flags, seed and input files; reruns are byte-identical.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "subtyper/baselines.hpp"
#include "subtyper/chimera.hpp"
#include "subtyper/cohort.hpp"
#include "subtyper/common.hpp"
#include "subtyper/hydra.hpp"
#include "subtyper/magic.hpp"
#include "subtyper/model_io.hpp"
#include "subtyper/opnmf.hpp"
#include "subtyper/validation.hpp"

namespace {

using subtyper::Cohort;
using subtyper::Method;
using subtyper::MethodOptions;
using subtyper::ModelBundle;
using subtyper::ValidationError;
using ordered_json = nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNotConverged = 3;

struct CommonFitOptions {
  std::string input;
  std::string method = "hydra";
  int k = 2;
  std::uint64_t seed = 0;
  double mu = 1.0;
  int restarts = 5;
  int max_alternations = 50;
  double svm_tol = 1e-6;
  int svm_max_iter = 10000;
  std::vector<int> scales;
  std::string linkage = "ward";
  int max_iter = 500;
  double tol = 1e-8;
  int jobs = 1;
};

void add_method_flags(CLI::App* cmd, CommonFitOptions& opt) {
  cmd->add_option("--input", opt.input, "cohort CSV file")->required();
  cmd->add_option("--method", opt.method,
                  "hydra, magic, chimera, kmeans, hierarchical, or nmf");
  cmd->add_option("--seed", opt.seed, "RNG seed (unsigned 64-bit)");
  cmd->add_option("--mu", opt.mu, "margin penalty for hydra/magic");
  cmd->add_option("--restarts", opt.restarts, "independent restarts for seeded fits");
  cmd->add_option("--max-alternations", opt.max_alternations,
                  "alternation budget for hydra/magic");
  cmd->add_option("--svm-tol", opt.svm_tol, "duality-gap tolerance of the SVM subsolver");
  cmd->add_option("--svm-max-iter", opt.svm_max_iter, "sweep budget of the SVM subsolver");
  cmd->add_option("--scales", opt.scales, "magic scale schedule, e.g. 2,4,8")->delimiter(',');
  cmd->add_option("--linkage", opt.linkage, "single, complete, average, or ward");
  cmd->add_option("--max-iter", opt.max_iter, "iteration budget for chimera/kmeans/nmf");
  cmd->add_option("--tol", opt.tol, "convergence tolerance for chimera/nmf");
  cmd->add_option("--jobs", opt.jobs, "max worker threads for restarts/resamples");
}

MethodOptions to_method_options(const CommonFitOptions& opt) {
  MethodOptions m;
  m.mu = opt.mu;
  m.n_restarts = opt.restarts;
  m.max_alternations = opt.max_alternations;
  m.svm_tol = opt.svm_tol;
  m.svm_max_iter = opt.svm_max_iter;
  m.linkage = subtyper::linkage_from_string(opt.linkage);
  m.scales = opt.scales;
  m.max_iter = opt.max_iter;
  m.tol = opt.tol;
  m.jobs = opt.jobs;
  return m;
}

void check_common(const CommonFitOptions& opt) {
  if (opt.k < 1) throw ValidationError("--k must be at least 1");
  if (opt.restarts < 1) throw ValidationError("--restarts must be at least 1");
  if (opt.jobs < 1) throw ValidationError("--jobs must be at least 1");
}

// preprocessing every command replays identically: residualize + standardize on
// controls; NMF-based methods additionally need the non-negative rescale
struct PreparedCohort {
  Cohort raw;
  Cohort processed;
  subtyper::PreprocessModel preprocess;
  bool rescaled = false;
};

PreparedCohort prepare(const std::string& input, Method method) {
  PreparedCohort out;
  out.raw = subtyper::load_cohort(input);
  out.preprocess = subtyper::fit_preprocess(out.raw);
  out.processed = subtyper::apply_preprocess(out.preprocess, out.raw);
  if (method == Method::magic || method == Method::nmf) {
    out.processed = subtyper::rescale_non_negative(out.preprocess, out.processed);
    out.rescaled = true;
  }
  return out;
}

Eigen::MatrixXd label_centroids(const Eigen::MatrixXd& X, const std::vector<int>& labels, int k) {
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

ModelBundle fit_bundle(const CommonFitOptions& opt, const PreparedCohort& data) {
  const Method method = subtyper::method_from_string(opt.method);
  ModelBundle bundle;
  bundle.kind = opt.method;
  bundle.k = opt.k;
  bundle.seed = opt.seed;
  bundle.rescaled = data.rescaled;
  bundle.preprocess = data.preprocess;

  switch (method) {
    case Method::hydra: {
      subtyper::HydraConfig cfg;
      cfg.k = opt.k;
      cfg.mu = opt.mu;
      cfg.n_restarts = opt.restarts;
      cfg.max_alternations = opt.max_alternations;
      cfg.seed = opt.seed;
      cfg.svm_tol = opt.svm_tol;
      cfg.svm_max_iter = opt.svm_max_iter;
      cfg.jobs = opt.jobs;
      subtyper::HydraFit fit = subtyper::fit_hydra(data.processed, cfg);
      bundle.polytope = std::move(fit.polytope);
      bundle.mu = opt.mu;
      bundle.objective = fit.objective;
      bundle.converged = fit.converged && fit.svm_converged;
      break;
    }
    case Method::magic: {
      subtyper::MagicConfig cfg;
      cfg.k = opt.k;
      cfg.scales = opt.scales;
      cfg.hydra.mu = opt.mu;
      cfg.hydra.n_restarts = opt.restarts;
      cfg.hydra.max_alternations = opt.max_alternations;
      cfg.hydra.seed = opt.seed;
      cfg.hydra.svm_tol = opt.svm_tol;
      cfg.hydra.svm_max_iter = opt.svm_max_iter;
      cfg.consensus_seed = subtyper::derive_seed(opt.seed, 0xc0ull);
      cfg.jobs = opt.jobs;
      subtyper::MagicResult res = subtyper::fit_magic(data.processed, cfg);
      for (const subtyper::ScaleBasis& basis : res.bases) bundle.scales.push_back(basis.r);
      bundle.bases = std::move(res.bases);
      bundle.pool = std::move(res.pool);
      bundle.cooccurrence = std::move(res.cooccurrence);
      for (int lab : res.labels) bundle.consensus_labels.push_back(lab + 1);
      bundle.scale_consistency = res.scale_consistency;
      bundle.centroids = std::move(res.centroids);
      bundle.converged = res.converged;
      break;
    }
    case Method::chimera: {
      subtyper::ChimeraFit fit =
          subtyper::fit_chimera(data.processed, opt.k, opt.seed, opt.max_iter, opt.tol);
      bundle.chimera = std::move(fit.model);
      bundle.converged = fit.converged;
      break;
    }
    case Method::kmeans: {
      subtyper::KmeansResult res = subtyper::kmeans(data.processed.patient_features(), opt.k,
                                                    opt.seed, std::min(opt.max_iter, 100),
                                                    opt.restarts);
      bundle.centroids = std::move(res.centroids);
      bundle.wcss = res.wcss;
      bundle.converged = res.converged;
      break;
    }
    case Method::hierarchical: {
      const Eigen::MatrixXd patients = data.processed.patient_features();
      bundle.linkage = subtyper::linkage_from_string(opt.linkage);
      bundle.dendrogram = subtyper::hierarchical(patients, bundle.linkage);
      const std::vector<int> labels = subtyper::cut_dendrogram(bundle.dendrogram, opt.k);
      bundle.centroids = label_centroids(patients, labels, opt.k);
      bundle.converged = true;
      break;
    }
    case Method::nmf: {
      subtyper::OpnmfResult fit = subtyper::fit_opnmf(
          data.processed.patient_features().transpose(), opt.k, opt.seed);
      bundle.nmf_basis = std::move(fit.basis);
      bundle.converged = fit.converged;
      break;
    }
  }

  bundle.patient_ids = data.raw.patient_ids();
  for (int lab : subtyper::assign_with_model(bundle, data.raw)) {
    bundle.assignments.push_back(lab + 1);
  }
  return bundle;
}

int cmd_fit(const CommonFitOptions& opt, const std::string& output, std::string table) {
  check_common(opt);
  const PreparedCohort data = prepare(opt.input, subtyper::method_from_string(opt.method));
  const ModelBundle bundle = fit_bundle(opt, data);
  subtyper::save_model(output, bundle);
  if (table.empty()) {
    table = std::filesystem::path(output).replace_extension(".assignments.csv").string();
  }
  std::vector<int> labels;
  for (int lab : bundle.assignments) labels.push_back(lab - 1);
  subtyper::write_assignment_table(table, data.raw, labels);
  if (!bundle.converged) {
    std::cerr << "warning: fit did not converge within its budget; model written with "
                 "converged=false\n";
    return kExitNotConverged;
  }
  return kExitOk;
}

int cmd_assign(const std::string& model_path, const std::string& input,
               const std::string& output) {
  const ModelBundle bundle = subtyper::load_model(model_path);
  const Cohort raw = subtyper::load_cohort(input);
  const std::vector<int> labels = subtyper::assign_with_model(bundle, raw);
  subtyper::write_assignment_table(output, raw, labels);
  return kExitOk;
}

struct SimulateOptions {
  std::string output;
  std::string truth;
  int k = 2;
  double effect = 1.0;
  double fraction = 0.2;
  double overlap = 0.0;
  std::string direction = "decrease";
  int n_controls = 100;
  int n_patients = 100;
  int p = 50;
  std::uint64_t seed = 0;
};

int cmd_simulate(const SimulateOptions& opt) {
  subtyper::SimSpec spec;
  spec.k_planted = opt.k;
  spec.effect_size = opt.effect;
  spec.affected_fraction = opt.fraction;
  spec.overlap = opt.overlap;
  spec.direction = subtyper::direction_from_string(opt.direction);
  spec.n_controls = opt.n_controls;
  spec.n_patients = opt.n_patients;
  spec.p = opt.p;
  spec.seed = opt.seed;
  const subtyper::SimulatedCohort sim = subtyper::generate_semi_simulated(spec);
  subtyper::save_cohort(sim.cohort, opt.output);
  if (!opt.truth.empty()) {
    std::ofstream out(opt.truth);
    if (!out) throw ValidationError("cannot open '" + opt.truth + "' for writing");
    out << "id,subtype\n";
    const std::vector<std::string> ids = sim.cohort.patient_ids();
    for (std::size_t i = 0; i < ids.size(); ++i) {
      out << ids[i] << ',' << sim.planted[i] + 1 << '\n';
    }
  }
  return kExitOk;
}

ordered_json optional_to_json(const std::optional<double>& v) {
  return v ? ordered_json(*v) : ordered_json(nullptr);
}

void write_report(const std::string& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("failed writing '" + path + "'");
}

int cmd_scan_k(const CommonFitOptions& opt, int kmin, int kmax, int resamples, double fraction,
               const std::string& output) {
  if (kmin < 1 || kmax < kmin) {
    throw ValidationError("--kmin/--kmax must satisfy 1 <= kmin <= kmax");
  }
  if (opt.jobs < 1) throw ValidationError("--jobs must be at least 1");
  const Method method = subtyper::method_from_string(opt.method);
  const PreparedCohort data = prepare(opt.input, method);
  std::vector<int> k_values;
  for (int k = kmin; k <= kmax; ++k) k_values.push_back(k);
  const subtyper::StabilityReport report = subtyper::scan_k(
      data.processed, method, k_values, resamples, fraction, opt.seed, to_method_options(opt));

  ordered_json j;
  j["format"] = "subtyper-report";
  j["command"] = "scan-k";
  j["method"] = opt.method;
  j["seed"] = opt.seed;
  j["n_resamples"] = resamples;
  j["subsample_fraction"] = fraction;
  j["k_values"] = k_values;
  ordered_json per_k = ordered_json::array();
  for (const subtyper::KStability& entry : report.per_k) {
    ordered_json row;
    row["k"] = entry.k;
    row["mean_ari"] = optional_to_json(entry.mean_ari);
    row["dispersion"] = optional_to_json(entry.dispersion);
    row["n_failed"] = entry.n_failed;
    row["n_resamples"] = entry.n_resamples;
    per_k.push_back(std::move(row));
  }
  j["per_k"] = std::move(per_k);
  j["selected_k"] = report.selected_k ? ordered_json(*report.selected_k) : ordered_json(nullptr);
  write_report(output, j);
  return kExitOk;
}

int cmd_validate(const CommonFitOptions& opt, int splits, int permutations, int resamples,
                 double fraction, const std::string& output) {
  check_common(opt);
  const Method method = subtyper::method_from_string(opt.method);
  const PreparedCohort data = prepare(opt.input, method);
  const MethodOptions options = to_method_options(opt);

  ordered_json j;
  j["format"] = "subtyper-report";
  j["command"] = "validate";
  j["method"] = opt.method;
  j["k"] = opt.k;
  j["seed"] = opt.seed;

  std::vector<double> aris;
  if (splits > 0) {
    aris = subtyper::split_half_reproducibility(data.processed, method, opt.k, splits, opt.seed,
                                                options);
  }
  ordered_json split_json;
  split_json["n_splits"] = splits;
  split_json["ari"] = aris;
  if (aris.empty()) {
    split_json["median"] = nullptr;
  } else {
    std::vector<double> sorted = aris;
    std::sort(sorted.begin(), sorted.end());
    const std::size_t mid = sorted.size() / 2;
    split_json["median"] = sorted.size() % 2 == 1
                               ? sorted[mid]
                               : 0.5 * (sorted[mid - 1] + sorted[mid]);
  }
  j["split_half"] = std::move(split_json);

  const subtyper::PermutationResult perm = subtyper::permutation_test(
      data.processed, method, opt.k, permutations, subtyper::derive_seed(opt.seed, 0x7065726dull),
      options, resamples, fraction);
  ordered_json perm_json;
  perm_json["n_perm"] = permutations;
  perm_json["observed"] = perm.observed;
  perm_json["p_value"] = perm.p_value;
  perm_json["null_stats"] = perm.null_stats;
  j["permutation"] = std::move(perm_json);

  write_report(output, j);
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"semi-supervised patient-subtype clustering toolkit"};
  app.require_subcommand(1);

  CommonFitOptions fit_opt;
  std::string fit_output;
  std::string fit_table;
  CLI::App* fit = app.add_subcommand("fit", "fit a subtype model to a cohort");
  add_method_flags(fit, fit_opt);
  fit->add_option("--k", fit_opt.k, "number of subtypes")->required();
  fit->add_option("--output", fit_output, "model JSON path")->required();
  fit->add_option("--table", fit_table,
                  "assignment table path (default: model path with .assignments.csv)");

  std::string assign_model;
  std::string assign_input;
  std::string assign_output;
  CLI::App* assign = app.add_subcommand("assign", "assign samples with a fitted model");
  assign->add_option("--model", assign_model, "model JSON path")->required();
  assign->add_option("--input", assign_input, "cohort CSV file")->required();
  assign->add_option("--output", assign_output, "assignment table path")->required();

  SimulateOptions sim_opt;
  CLI::App* simulate = app.add_subcommand("simulate", "generate a semi-simulated cohort");
  simulate->add_option("--output", sim_opt.output, "cohort CSV path")->required();
  simulate->add_option("--truth", sim_opt.truth, "planted subtype table path");
  simulate->add_option("--k", sim_opt.k, "planted subtype count");
  simulate->add_option("--effect", sim_opt.effect, "shift size in control sd units");
  simulate->add_option("--fraction", sim_opt.fraction, "fraction of features affected per subtype");
  simulate->add_option("--overlap", sim_opt.overlap, "shared fraction of affected features");
  simulate->add_option("--direction", sim_opt.direction, "decrease, increase, or mixed");
  simulate->add_option("--controls", sim_opt.n_controls, "number of control samples");
  simulate->add_option("--patients", sim_opt.n_patients, "number of patient samples");
  simulate->add_option("--p", sim_opt.p, "number of features");
  simulate->add_option("--seed", sim_opt.seed, "RNG seed");

  CommonFitOptions scan_opt;
  scan_opt.method = "kmeans";
  int scan_kmin = 2;
  int scan_kmax = 5;
  int scan_resamples = 5;
  double scan_fraction = 0.8;
  std::string scan_output;
  CLI::App* scan = app.add_subcommand("scan-k", "stability scan over candidate subtype counts");
  add_method_flags(scan, scan_opt);
  scan->add_option("--kmin", scan_kmin, "smallest k to scan");
  scan->add_option("--kmax", scan_kmax, "largest k to scan");
  scan->add_option("--resamples", scan_resamples, "subsample fits per k");
  scan->add_option("--fraction", scan_fraction, "patient subsample fraction");
  scan->add_option("--output", scan_output, "report JSON path")->required();

  CommonFitOptions val_opt;
  val_opt.method = "kmeans";
  int val_splits = 5;
  int val_permutations = 99;
  int val_resamples = 5;
  double val_fraction = 0.8;
  std::string val_output;
  CLI::App* validate = app.add_subcommand(
      "validate", "split-half reproducibility and permutation significance at one k");
  add_method_flags(validate, val_opt);
  validate->add_option("--k", val_opt.k, "number of subtypes")->required();
  validate->add_option("--splits", val_splits, "split-half repetitions (0 to skip)");
  validate->add_option("--permutations", val_permutations, "label permutations for the null");
  validate->add_option("--resamples", val_resamples, "subsample fits per stability statistic");
  validate->add_option("--fraction", val_fraction, "patient subsample fraction");
  validate->add_option("--output", val_output, "report JSON path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (app.got_subcommand(fit)) return cmd_fit(fit_opt, fit_output, fit_table);
    if (app.got_subcommand(assign)) return cmd_assign(assign_model, assign_input, assign_output);
    if (app.got_subcommand(simulate)) return cmd_simulate(sim_opt);
    if (app.got_subcommand(scan)) {
      return cmd_scan_k(scan_opt, scan_kmin, scan_kmax, scan_resamples, scan_fraction,
                        scan_output);
    }
    if (app.got_subcommand(validate)) {
      return cmd_validate(val_opt, val_splits, val_permutations, val_resamples, val_fraction,
                          val_output);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitOk;
}
