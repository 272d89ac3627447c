#include "subtyper/cohort.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>
#include <unordered_set>

namespace subtyper {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  for (char ch : line) {
    if (ch == ',') {
      cells.push_back(cell);
      cell.clear();
    } else if (ch != '\r') {
      cell.push_back(ch);
    }
  }
  cells.push_back(cell);
  return cells;
}

bool parse_double(const std::string& cell, double& out) {
  if (cell.empty()) return false;
  const char* first = cell.data();
  const char* last = first + cell.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<Eigen::Index> Cohort::control_rows() const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] == -1) rows.push_back(i);
  return rows;
}

std::vector<Eigen::Index> Cohort::patient_rows() const {
  std::vector<Eigen::Index> rows;
  for (Eigen::Index i = 0; i < labels.size(); ++i)
    if (labels[i] == 1) rows.push_back(i);
  return rows;
}

Eigen::MatrixXd Cohort::patient_features() const {
  const auto rows = patient_rows();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
  return out;
}

Eigen::MatrixXd Cohort::control_features() const {
  const auto rows = control_rows();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), features.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = features.row(rows[i]);
  return out;
}

std::vector<std::string> Cohort::patient_ids() const {
  std::vector<std::string> ids;
  for (Eigen::Index i : patient_rows()) ids.push_back(sample_ids[static_cast<std::size_t>(i)]);
  return ids;
}

Cohort Cohort::subset_rows(const std::vector<Eigen::Index>& rows) const {
  Cohort out;
  out.feature_names = feature_names;
  out.covariate_names = covariate_names;
  out.features.resize(static_cast<Eigen::Index>(rows.size()), features.cols());
  out.covariates.resize(static_cast<Eigen::Index>(rows.size()), covariates.cols());
  out.labels.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const Eigen::Index r = rows[i];
    out.sample_ids.push_back(sample_ids[static_cast<std::size_t>(r)]);
    out.features.row(static_cast<Eigen::Index>(i)) = features.row(r);
    out.covariates.row(static_cast<Eigen::Index>(i)) = covariates.row(r);
    out.labels[static_cast<Eigen::Index>(i)] = labels[r];
  }
  return out;
}

void Cohort::validate() const {
  const Eigen::Index n = features.rows();
  if (static_cast<Eigen::Index>(sample_ids.size()) != n || labels.size() != n ||
      covariates.rows() != n) {
    throw ValidationError("cohort: inconsistent row counts across ids, features, labels, covariates");
  }
  if (static_cast<Eigen::Index>(feature_names.size()) != features.cols())
    throw ValidationError("cohort: feature name count does not match feature columns");
  if (static_cast<Eigen::Index>(covariate_names.size()) != covariates.cols())
    throw ValidationError("cohort: covariate name count does not match covariate columns");
  for (Eigen::Index i = 0; i < n; ++i) {
    if (labels[i] != 1 && labels[i] != -1)
      throw ValidationError("cohort: label for sample '" + sample_ids[static_cast<std::size_t>(i)] +
                            "' is not +1 or -1");
  }
  if (!features.allFinite())
    throw ValidationError("cohort: features contain non-finite values");
  if (!covariates.allFinite())
    throw ValidationError("cohort: covariates contain non-finite values");
  std::unordered_set<std::string> seen;
  for (const auto& id : sample_ids) {
    if (!seen.insert(id).second)
      throw ValidationError("cohort: duplicate sample id '" + id + "'");
  }
}

void Cohort::require_both_classes() const {
  bool has_pt = false, has_cn = false;
  for (Eigen::Index i = 0; i < labels.size(); ++i) {
    if (labels[i] == 1) has_pt = true;
    if (labels[i] == -1) has_cn = true;
  }
  if (!has_pt || !has_cn)
    throw ValidationError("cohort: both a patient (+1) and a control (-1) group are required");
}

Cohort load_cohort(const std::filesystem::path& path, const ColumnSchema& schema) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open cohort file: " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw ValidationError("cohort file is empty: " + path.string());
  const auto header = split_csv_line(line);

  int id_col = -1, label_col = -1;
  std::vector<int> cov_cols, feat_cols;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const std::string& name = header[c];
    if (name == schema.id_column) {
      id_col = static_cast<int>(c);
    } else if (name == schema.label_column) {
      label_col = static_cast<int>(c);
    } else if (name.rfind(schema.covariate_prefix, 0) == 0) {
      cov_cols.push_back(static_cast<int>(c));
    } else if (name.rfind(schema.feature_prefix, 0) == 0) {
      feat_cols.push_back(static_cast<int>(c));
    } else {
      throw ValidationError("unrecognized column '" + name + "' in " + path.string() +
                            " (expected '" + schema.id_column + "', '" + schema.label_column +
                            "', or prefixes '" + schema.covariate_prefix + "', '" +
                            schema.feature_prefix + "')");
    }
  }
  if (label_col < 0)
    throw ValidationError("missing label column '" + schema.label_column + "' in " + path.string());
  if (id_col < 0)
    throw ValidationError("missing id column '" + schema.id_column + "' in " + path.string());
  if (feat_cols.empty())
    throw ValidationError("no feature columns (prefix '" + schema.feature_prefix + "') in " +
                          path.string());

  Cohort cohort;
  for (int c : cov_cols) cohort.covariate_names.push_back(header[static_cast<std::size_t>(c)]);
  for (int c : feat_cols) cohort.feature_names.push_back(header[static_cast<std::size_t>(c)]);

  std::vector<std::string> ids;
  std::vector<int> labels;
  std::vector<double> feat_values, cov_values;
  std::unordered_set<std::string> seen_ids;

  std::size_t file_row = 1;  // header is row 1
  while (std::getline(in, line)) {
    ++file_row;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw ValidationError("row " + std::to_string(file_row) + ": expected " +
                            std::to_string(header.size()) + " cells, found " +
                            std::to_string(cells.size()));
    }

    const std::string& id = cells[static_cast<std::size_t>(id_col)];
    if (id.empty())
      throw ValidationError("row " + std::to_string(file_row) + ": empty id");
    if (!seen_ids.insert(id).second)
      throw ValidationError("row " + std::to_string(file_row) + ": duplicate id '" + id + "'");
    ids.push_back(id);

    const std::string& label_cell = cells[static_cast<std::size_t>(label_col)];
    if (label_cell == "1" || label_cell == "+1") {
      labels.push_back(1);
    } else if (label_cell == "-1") {
      labels.push_back(-1);
    } else {
      throw ValidationError("row " + std::to_string(file_row) + ", column '" +
                            schema.label_column + "': label must be -1 or 1, got '" + label_cell +
                            "'");
    }

    for (int c : cov_cols) {
      double v;
      if (!parse_double(cells[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(file_row) + ", column '" +
                              header[static_cast<std::size_t>(c)] + "': non-numeric value '" +
                              cells[static_cast<std::size_t>(c)] + "'");
      }
      cov_values.push_back(v);
    }
    for (int c : feat_cols) {
      double v;
      if (!parse_double(cells[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw ValidationError("row " + std::to_string(file_row) + ", column '" +
                              header[static_cast<std::size_t>(c)] + "': non-numeric value '" +
                              cells[static_cast<std::size_t>(c)] + "'");
      }
      feat_values.push_back(v);
    }
  }

  const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
  const Eigen::Index p = static_cast<Eigen::Index>(feat_cols.size());
  const Eigen::Index c = static_cast<Eigen::Index>(cov_cols.size());
  cohort.sample_ids = std::move(ids);
  cohort.labels.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) cohort.labels[i] = labels[static_cast<std::size_t>(i)];
  cohort.features.resize(n, p);
  cohort.covariates.resize(n, c);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < p; ++j)
      cohort.features(i, j) = feat_values[static_cast<std::size_t>(i * p + j)];
    for (Eigen::Index j = 0; j < c; ++j)
      cohort.covariates(i, j) = cov_values[static_cast<std::size_t>(i * c + j)];
  }
  cohort.validate();
  return cohort;
}

void save_cohort(const Cohort& cohort, const std::filesystem::path& path,
                 const ColumnSchema& schema) {
  cohort.validate();
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write cohort file: " + path.string());

  out << schema.id_column << ',' << schema.label_column;
  for (const auto& name : cohort.covariate_names) out << ',' << name;
  for (const auto& name : cohort.feature_names) out << ',' << name;
  out << '\n';

  for (Eigen::Index i = 0; i < cohort.n_samples(); ++i) {
    out << cohort.sample_ids[static_cast<std::size_t>(i)] << ',' << cohort.labels[i];
    for (Eigen::Index j = 0; j < cohort.covariates.cols(); ++j)
      out << ',' << format_double(cohort.covariates(i, j));
    for (Eigen::Index j = 0; j < cohort.features.cols(); ++j)
      out << ',' << format_double(cohort.features(i, j));
    out << '\n';
  }
}

std::vector<std::string> PreprocessModel::kept_feature_names() const {
  std::vector<std::string> names;
  for (Eigen::Index idx : kept) names.push_back(feature_names[static_cast<std::size_t>(idx)]);
  return names;
}

PreprocessModel fit_preprocess(const Cohort& cohort) {
  cohort.validate();
  cohort.require_both_classes();
  const auto controls = cohort.control_rows();
  const Eigen::Index q = static_cast<Eigen::Index>(controls.size());
  if (q < 3) throw ValidationError("fit_preprocess: at least 3 control samples required, have " +
                                   std::to_string(q));

  const Eigen::Index p = cohort.n_features();
  const Eigen::Index c = cohort.covariates.cols();

  // design matrix [1, covariates] over controls
  Eigen::MatrixXd Z(q, c + 1);
  Eigen::MatrixXd Fc(q, p);
  for (Eigen::Index i = 0; i < q; ++i) {
    Z(i, 0) = 1.0;
    Z.row(i).tail(c) = cohort.covariates.row(controls[static_cast<std::size_t>(i)]);
    Fc.row(i) = cohort.features.row(controls[static_cast<std::size_t>(i)]);
  }

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(1e-10);
  if (qr.rank() < c + 1) {
    // blame the pivoted-out design columns by name
    const auto perm = qr.colsPermutation().indices();
    std::string names;
    for (Eigen::Index r = qr.rank(); r < c + 1; ++r) {
      const Eigen::Index col = perm[r];
      if (!names.empty()) names += ", ";
      names += (col == 0) ? "intercept"
                          : cohort.covariate_names[static_cast<std::size_t>(col - 1)];
    }
    throw ValidationError("fit_preprocess: covariates are rank deficient on controls (collinear: " +
                          names + ")");
  }

  const Eigen::MatrixXd coef_all = qr.solve(Fc);  // (c+1) x p
  const Eigen::MatrixXd resid = Fc - Z * coef_all;

  const Eigen::VectorXd mean_all = resid.colwise().mean();
  Eigen::VectorXd sd_all(p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const double ss = (resid.col(j).array() - mean_all[j]).square().sum();
    sd_all[j] = std::sqrt(ss / static_cast<double>(q - 1));
  }

  PreprocessModel model;
  model.feature_names = cohort.feature_names;
  model.covariate_names = cohort.covariate_names;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (sd_all[j] < 1e-12) {
      model.dropped_features.push_back(cohort.feature_names[static_cast<std::size_t>(j)]);
      model.warnings.push_back("feature '" + cohort.feature_names[static_cast<std::size_t>(j)] +
                               "' is constant on controls after residualization; dropped");
    } else {
      model.kept.push_back(j);
    }
  }
  if (model.kept.empty())
    throw ValidationError("fit_preprocess: all features constant after residualization");

  const Eigen::Index pk = static_cast<Eigen::Index>(model.kept.size());
  model.coef.resize(c + 1, pk);
  model.mean.resize(pk);
  model.sd.resize(pk);
  for (Eigen::Index j = 0; j < pk; ++j) {
    model.coef.col(j) = coef_all.col(model.kept[static_cast<std::size_t>(j)]);
    model.mean[j] = mean_all[model.kept[static_cast<std::size_t>(j)]];
    model.sd[j] = sd_all[model.kept[static_cast<std::size_t>(j)]];
  }

  // min/max bounds from the full cohort after standardization
  Eigen::MatrixXd Zall(cohort.n_samples(), c + 1);
  Zall.col(0).setOnes();
  Zall.rightCols(c) = cohort.covariates;
  const Eigen::MatrixXd pred = Zall * model.coef;
  model.min.resize(pk);
  model.max.resize(pk);
  for (Eigen::Index j = 0; j < pk; ++j) {
    const Eigen::Index orig = model.kept[static_cast<std::size_t>(j)];
    const Eigen::ArrayXd std_col =
        ((cohort.features.col(orig) - pred.col(j)).array() - model.mean[j]) / model.sd[j];
    model.min[j] = std_col.minCoeff();
    model.max[j] = std_col.maxCoeff();
  }
  return model;
}

namespace {

void check_layout(const PreprocessModel& model, const Cohort& cohort) {
  if (cohort.covariate_names != model.covariate_names)
    throw ValidationError("apply_preprocess: covariate layout differs from fit time");
  if (cohort.feature_names != model.feature_names)
    throw ValidationError("apply_preprocess: feature layout differs from fit time (expected " +
                          std::to_string(model.feature_names.size()) + " features)");
}

}  // namespace

Cohort apply_preprocess(const PreprocessModel& model, const Cohort& cohort) {
  cohort.validate();
  check_layout(model, cohort);

  const Eigen::Index n = cohort.n_samples();
  const Eigen::Index c = cohort.covariates.cols();
  const Eigen::Index pk = static_cast<Eigen::Index>(model.kept.size());

  Eigen::MatrixXd Z(n, c + 1);
  Z.col(0).setOnes();
  Z.rightCols(c) = cohort.covariates;
  const Eigen::MatrixXd pred = Z * model.coef;

  Cohort out;
  out.sample_ids = cohort.sample_ids;
  out.covariate_names = cohort.covariate_names;
  out.covariates = cohort.covariates;
  out.labels = cohort.labels;
  out.feature_names = model.kept_feature_names();
  out.features.resize(n, pk);
  for (Eigen::Index j = 0; j < pk; ++j) {
    const Eigen::Index orig = model.kept[static_cast<std::size_t>(j)];
    out.features.col(j) =
        ((cohort.features.col(orig) - pred.col(j)).array() - model.mean[j]) / model.sd[j];
  }
  return out;
}

Cohort rescale_non_negative(const PreprocessModel& model, const Cohort& cohort) {
  cohort.validate();
  const Eigen::Index pk = static_cast<Eigen::Index>(model.kept.size());
  if (cohort.n_features() != pk || cohort.feature_names != model.kept_feature_names())
    throw ValidationError("rescale_non_negative: expected a cohort standardized by this model");

  Cohort out = cohort;
  for (Eigen::Index j = 0; j < pk; ++j) {
    double range = model.max[j] - model.min[j];
    if (range < 1e-12) range = 1.0;
    out.features.col(j) = ((cohort.features.col(j).array() - model.min[j]) / range)
                              .cwiseMax(0.0)
                              .cwiseMin(1.0);
  }
  return out;
}

}  // namespace subtyper
