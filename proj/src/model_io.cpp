#include "subtyper/model_io.hpp"

#include <fstream>
#include <map>

#include "json.hpp"
#include "subtyper/common.hpp"

namespace subtyper {

namespace {

using ordered_json = nlohmann::ordered_json;

ordered_json matrix_to_json(const Eigen::MatrixXd& mat) {
  ordered_json rows = ordered_json::array();
  for (Eigen::Index i = 0; i < mat.rows(); ++i) {
    ordered_json row = ordered_json::array();
    for (Eigen::Index j = 0; j < mat.cols(); ++j) row.push_back(mat(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const ordered_json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError("model file: " + what + " must be an array of rows");
  const Eigen::Index rows = static_cast<Eigen::Index>(j.size());
  if (rows == 0) return Eigen::MatrixXd(0, 0);
  if (!j[0].is_array()) throw ValidationError("model file: " + what + " must be an array of rows");
  const Eigen::Index cols = static_cast<Eigen::Index>(j[0].size());
  Eigen::MatrixXd mat(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) {
      throw ValidationError("model file: " + what + " has ragged rows");
    }
    for (Eigen::Index c = 0; c < cols; ++c) {
      mat(i, c) = row[static_cast<std::size_t>(c)].get<double>();
    }
  }
  return mat;
}

ordered_json vector_to_json(const Eigen::VectorXd& v) {
  ordered_json arr = ordered_json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v[i]);
  return arr;
}

Eigen::VectorXd vector_from_json(const ordered_json& j, const std::string& what) {
  if (!j.is_array()) throw ValidationError("model file: " + what + " must be an array");
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

ordered_json preprocess_to_json(const PreprocessModel& model) {
  ordered_json j;
  j["feature_names"] = model.feature_names;
  j["covariate_names"] = model.covariate_names;
  ordered_json kept = ordered_json::array();
  for (Eigen::Index idx : model.kept) kept.push_back(static_cast<std::int64_t>(idx));
  j["kept"] = std::move(kept);
  j["dropped_features"] = model.dropped_features;
  j["coef"] = matrix_to_json(model.coef);
  j["mean"] = vector_to_json(model.mean);
  j["sd"] = vector_to_json(model.sd);
  j["min"] = vector_to_json(model.min);
  j["max"] = vector_to_json(model.max);
  j["warnings"] = model.warnings;
  return j;
}

PreprocessModel preprocess_from_json(const ordered_json& j) {
  PreprocessModel model;
  model.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  model.covariate_names = j.at("covariate_names").get<std::vector<std::string>>();
  for (const auto& idx : j.at("kept")) {
    model.kept.push_back(static_cast<Eigen::Index>(idx.get<std::int64_t>()));
  }
  model.dropped_features = j.at("dropped_features").get<std::vector<std::string>>();
  model.coef = matrix_from_json(j.at("coef"), "preprocess.coef");
  model.mean = vector_from_json(j.at("mean"), "preprocess.mean");
  model.sd = vector_from_json(j.at("sd"), "preprocess.sd");
  model.min = vector_from_json(j.at("min"), "preprocess.min");
  model.max = vector_from_json(j.at("max"), "preprocess.max");
  model.warnings = j.at("warnings").get<std::vector<std::string>>();
  return model;
}

ordered_json basis_to_json(const ScaleBasis& basis) {
  ordered_json j;
  j["r"] = basis.r;
  j["C"] = matrix_to_json(basis.C);
  return j;
}

ScaleBasis basis_from_json(const ordered_json& j, const std::string& what) {
  ScaleBasis basis;
  basis.r = j.at("r").get<int>();
  basis.C = matrix_from_json(j.at("C"), what + ".C");
  if (basis.C.cols() != basis.r) {
    throw ValidationError("model file: " + what + " component count disagrees with C");
  }
  return basis;
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelBundle& bundle) {
  ordered_json j;
  j["format"] = "subtyper-model";
  j["version"] = 1;
  j["kind"] = bundle.kind;
  j["k"] = bundle.k;
  j["seed"] = bundle.seed;
  j["converged"] = bundle.converged;
  j["rescaled"] = bundle.rescaled;
  j["preprocess"] = bundle.preprocess ? preprocess_to_json(*bundle.preprocess)
                                      : ordered_json(nullptr);
  if (bundle.patient_ids.size() != bundle.assignments.size()) {
    throw ValidationError("save_model: assignments and patient ids differ in length");
  }
  ordered_json assignments = ordered_json::array();
  for (std::size_t i = 0; i < bundle.patient_ids.size(); ++i) {
    ordered_json entry;
    entry["id"] = bundle.patient_ids[i];
    entry["subtype"] = bundle.assignments[i];
    assignments.push_back(std::move(entry));
  }
  j["assignments"] = std::move(assignments);

  if (bundle.kind == "hydra") {
    j["mu"] = bundle.mu;
    j["objective"] = bundle.objective;
    ordered_json faces = ordered_json::array();
    for (const Hyperplane& face : bundle.polytope.faces) {
      ordered_json f;
      f["w"] = vector_to_json(face.w);
      f["b"] = face.b;
      faces.push_back(std::move(f));
    }
    j["faces"] = std::move(faces);
  } else if (bundle.kind == "magic") {
    j["scales"] = bundle.scales;
    ordered_json bases = ordered_json::array();
    for (const ScaleBasis& basis : bundle.bases) bases.push_back(basis_to_json(basis));
    j["bases"] = std::move(bases);
    ordered_json pool = ordered_json::array();
    for (const ScalePartition& part : bundle.pool) {
      ordered_json entry;
      entry["scale"] = part.scale;
      entry["branch"] = part.branch;
      entry["objective"] = part.objective;
      ordered_json labels = ordered_json::array();
      for (int lab : part.labels) labels.push_back(lab + 1);  // 1-based externally
      entry["labels"] = std::move(labels);
      pool.push_back(std::move(entry));
    }
    j["partitions"] = std::move(pool);
    j["cooccurrence"] = matrix_to_json(bundle.cooccurrence);
    j["consensus_labels"] = bundle.consensus_labels;
    j["scale_consistency"] = bundle.scale_consistency;
    j["centroids"] = matrix_to_json(bundle.centroids);
  } else if (bundle.kind == "chimera") {
    j["displacements"] = matrix_to_json(bundle.chimera.displacements);
    j["sigma2"] = bundle.chimera.sigma2;
    j["responsibilities"] = matrix_to_json(bundle.chimera.xi);
  } else if (bundle.kind == "kmeans") {
    j["centroids"] = matrix_to_json(bundle.centroids);
    j["wcss"] = bundle.wcss;
  } else if (bundle.kind == "hierarchical") {
    j["linkage"] = linkage_to_string(bundle.linkage);
    j["n_leaves"] = bundle.dendrogram.n_leaves;
    ordered_json merges = ordered_json::array();
    for (const Merge& merge : bundle.dendrogram.merges) {
      ordered_json entry;
      entry["left"] = merge.left;
      entry["right"] = merge.right;
      entry["distance"] = merge.distance;
      entry["id"] = merge.id;
      merges.push_back(std::move(entry));
    }
    j["merges"] = std::move(merges);
    j["centroids"] = matrix_to_json(bundle.centroids);
  } else if (bundle.kind == "nmf") {
    j["basis"] = basis_to_json(bundle.nmf_basis);
  } else {
    throw ValidationError("save_model: unknown model kind '" + bundle.kind + "'");
  }

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

ModelBundle load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open model file '" + path.string() + "'");
  ordered_json j;
  try {
    j = ordered_json::parse(in);
  } catch (const std::exception& e) {
    throw ValidationError("model file '" + path.string() + "' is not valid JSON: " + e.what());
  }

  try {
    if (j.value("format", std::string()) != "subtyper-model") {
      throw ValidationError("model file '" + path.string() + "' lacks the subtyper-model marker");
    }
    ModelBundle bundle;
    bundle.kind = j.at("kind").get<std::string>();
    bundle.k = j.at("k").get<int>();
    bundle.seed = j.at("seed").get<std::uint64_t>();
    bundle.converged = j.at("converged").get<bool>();
    bundle.rescaled = j.at("rescaled").get<bool>();
    if (!j.at("preprocess").is_null()) {
      bundle.preprocess = preprocess_from_json(j.at("preprocess"));
    }
    for (const auto& entry : j.at("assignments")) {
      bundle.patient_ids.push_back(entry.at("id").get<std::string>());
      bundle.assignments.push_back(entry.at("subtype").get<int>());
    }

    if (bundle.kind == "hydra") {
      bundle.mu = j.at("mu").get<double>();
      bundle.objective = j.at("objective").get<double>();
      for (const auto& f : j.at("faces")) {
        Hyperplane face;
        face.w = vector_from_json(f.at("w"), "face.w");
        face.b = f.at("b").get<double>();
        bundle.polytope.faces.push_back(std::move(face));
      }
      if (bundle.polytope.k() != bundle.k) {
        throw ValidationError("model file: face count disagrees with k");
      }
    } else if (bundle.kind == "magic") {
      bundle.scales = j.at("scales").get<std::vector<int>>();
      for (const auto& b : j.at("bases")) bundle.bases.push_back(basis_from_json(b, "basis"));
      for (const auto& entry : j.at("partitions")) {
        ScalePartition part;
        part.scale = entry.at("scale").get<int>();
        part.branch = entry.at("branch").get<int>();
        part.objective = entry.at("objective").get<double>();
        for (const auto& lab : entry.at("labels")) part.labels.push_back(lab.get<int>() - 1);
        bundle.pool.push_back(std::move(part));
      }
      bundle.cooccurrence = matrix_from_json(j.at("cooccurrence"), "cooccurrence");
      bundle.consensus_labels = j.at("consensus_labels").get<std::vector<int>>();
      bundle.scale_consistency = j.at("scale_consistency").get<double>();
      bundle.centroids = matrix_from_json(j.at("centroids"), "centroids");
    } else if (bundle.kind == "chimera") {
      bundle.chimera.displacements = matrix_from_json(j.at("displacements"), "displacements");
      bundle.chimera.sigma2 = j.at("sigma2").get<double>();
      bundle.chimera.xi = matrix_from_json(j.at("responsibilities"), "responsibilities");
      if (bundle.chimera.sigma2 <= 0.0) {
        throw ValidationError("model file: sigma2 must be positive");
      }
    } else if (bundle.kind == "kmeans") {
      bundle.centroids = matrix_from_json(j.at("centroids"), "centroids");
      bundle.wcss = j.at("wcss").get<double>();
    } else if (bundle.kind == "hierarchical") {
      bundle.linkage = linkage_from_string(j.at("linkage").get<std::string>());
      bundle.dendrogram.n_leaves = j.at("n_leaves").get<int>();
      for (const auto& entry : j.at("merges")) {
        Merge merge;
        merge.left = entry.at("left").get<int>();
        merge.right = entry.at("right").get<int>();
        merge.distance = entry.at("distance").get<double>();
        merge.id = entry.at("id").get<int>();
        bundle.dendrogram.merges.push_back(merge);
      }
      bundle.centroids = matrix_from_json(j.at("centroids"), "centroids");
    } else if (bundle.kind == "nmf") {
      bundle.nmf_basis = basis_from_json(j.at("basis"), "basis");
    } else {
      throw ValidationError("model file: unknown kind '" + bundle.kind + "'");
    }
    return bundle;
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError("model file '" + path.string() + "' is malformed: " + e.what());
  }
}

Cohort preprocess_for_model(const ModelBundle& bundle, const Cohort& raw) {
  if (!bundle.preprocess) {
    if (bundle.rescaled) {
      throw ValidationError("model file: rescaled flag set without preprocessing parameters");
    }
    return raw;
  }
  Cohort processed = apply_preprocess(*bundle.preprocess, raw);
  if (bundle.rescaled) processed = rescale_non_negative(*bundle.preprocess, processed);
  return processed;
}

std::vector<int> assign_with_model(const ModelBundle& bundle, const Cohort& raw) {
  const Cohort cohort = preprocess_for_model(bundle, raw);
  const Eigen::MatrixXd patients = cohort.patient_features();

  if (bundle.kind == "hydra") {
    return membership_labels(assign_membership(bundle.polytope, patients));
  }
  if (bundle.kind == "magic" || bundle.kind == "kmeans" || bundle.kind == "hierarchical") {
    if (patients.cols() != bundle.centroids.cols()) {
      throw ValidationError("assign: feature count does not match the model");
    }
    if (patients.rows() == 0) return {};
    return nearest_centroid_labels(patients, bundle.centroids);
  }
  if (bundle.kind == "chimera") {
    if (patients.rows() == 0) return {};
    const Eigen::MatrixXd controls = cohort.control_features();
    if (controls.rows() == 0) {
      throw ValidationError("assign: chimera models need control rows in the input cohort");
    }
    return assign_chimera(bundle.chimera, patients, controls);
  }
  if (bundle.kind == "nmf") {
    if (patients.rows() == 0) return {};
    return cluster_by_loading(bundle.nmf_basis, patients.transpose());
  }
  throw ValidationError("assign: unknown model kind '" + bundle.kind + "'");
}

void write_assignment_table(const std::filesystem::path& path, const Cohort& cohort,
                            const std::vector<int>& patient_labels) {
  const auto patients = cohort.patient_rows();
  if (patients.size() != patient_labels.size()) {
    throw ValidationError("assignment table: label count does not match the patients");
  }
  std::map<Eigen::Index, std::size_t> patient_pos;
  for (std::size_t i = 0; i < patients.size(); ++i) patient_pos[patients[i]] = i;

  std::ofstream out(path);
  if (!out) throw ValidationError("cannot open '" + path.string() + "' for writing");
  out << "id,label,subtype\n";
  for (Eigen::Index row = 0; row < cohort.n_samples(); ++row) {
    out << cohort.sample_ids[static_cast<std::size_t>(row)] << ','
        << cohort.labels[row] << ',';
    if (cohort.labels[row] == -1) {
      out << "reference";
    } else {
      out << patient_labels[patient_pos.at(row)] + 1;
    }
    out << '\n';
  }
  if (!out) throw ValidationError("failed writing '" + path.string() + "'");
}

}  // namespace subtyper
