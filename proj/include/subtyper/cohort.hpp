#ifndef SUBTYPER_COHORT_HPP
#define SUBTYPER_COHORT_HPP

#include <Eigen/Dense>
#include <filesystem>
#include <string>
#include <vector>

#include "subtyper/common.hpp"

namespace subtyper {

// A control/patient cohort: one row per sample, diagnostic label +1 (patient)
// or -1 (control), optional covariate columns for residualization.
struct Cohort {
  std::vector<std::string> sample_ids;
  std::vector<std::string> feature_names;
  std::vector<std::string> covariate_names;
  Eigen::MatrixXd features;    // n_samples x p
  Eigen::VectorXi labels;      // entries in {+1, -1}
  Eigen::MatrixXd covariates;  // n_samples x c (c may be 0)

  Eigen::Index n_samples() const { return features.rows(); }
  Eigen::Index n_features() const { return features.cols(); }

  std::vector<Eigen::Index> control_rows() const;
  std::vector<Eigen::Index> patient_rows() const;
  Eigen::Index n_controls() const { return static_cast<Eigen::Index>(control_rows().size()); }
  Eigen::Index n_patients() const { return static_cast<Eigen::Index>(patient_rows().size()); }

  // Patient/control feature blocks in cohort row order.
  Eigen::MatrixXd patient_features() const;
  Eigen::MatrixXd control_features() const;
  std::vector<std::string> patient_ids() const;

  Cohort subset_rows(const std::vector<Eigen::Index>& rows) const;

  // Checks structural invariants (finite features, labels in {+1,-1}, consistent
  // row counts, unique ids). Throws ValidationError on violation.
  void validate() const;

  // Throws unless both classes are present (required by every fit operation).
  void require_both_classes() const;
};

struct ColumnSchema {
  std::string id_column = "id";
  std::string label_column = "label";
  std::string covariate_prefix = "cov_";
  std::string feature_prefix = "f_";
};

// Reads a comma-separated cohort file (header row, UTF-8). Feature column order is
// preserved. Schema violations are reported with file row/column coordinates.
Cohort load_cohort(const std::filesystem::path& path, const ColumnSchema& schema = {});

// Writes the same format load_cohort reads. Numbers are emitted with shortest
// round-trip formatting so save/load reproduces the matrix bit-exactly.
void save_cohort(const Cohort& cohort, const std::filesystem::path& path,
                 const ColumnSchema& schema = {});

// Covariate residualization + standardization learned on controls, plus the
// min/max bounds (full cohort, post-standardization) used for the non-negative
// rescale that NMF-based methods need.
struct PreprocessModel {
  std::vector<std::string> feature_names;    // at fit time, before dropping
  std::vector<std::string> covariate_names;
  std::vector<Eigen::Index> kept;            // indices into feature_names
  std::vector<std::string> dropped_features; // constant after residualization
  Eigen::MatrixXd coef;  // (c+1) x kept : regression of each feature on [1, covariates]
  Eigen::VectorXd mean;  // kept : residual mean on controls
  Eigen::VectorXd sd;    // kept : residual sd on controls (ddof = 1), strictly positive
  Eigen::VectorXd min;   // kept : over the full cohort after standardization
  Eigen::VectorXd max;
  std::vector<std::string> warnings;

  std::vector<std::string> kept_feature_names() const;
};

// Fits per-feature OLS on [1, covariates] over controls, then mean/sd of the
// control residuals. Features whose control residual sd falls below 1e-12 are
// dropped with a warning. Requires >= 3 controls and full-rank covariates.
PreprocessModel fit_preprocess(const Cohort& cohort);

// (feature - covariate prediction - control mean) / control sd, for kept features.
// Labels, ids and covariates pass through unchanged.
Cohort apply_preprocess(const PreprocessModel& model, const Cohort& cohort);

// Min-max rescale of an already-standardized cohort into [0,1], clamped, using the
// bounds recorded at fit time. Kept separate from apply_preprocess on purpose:
// only NMF-based methods need non-negative inputs.
Cohort rescale_non_negative(const PreprocessModel& model, const Cohort& cohort);

}  // namespace subtyper

#endif
