#ifndef SUBTYPER_MODEL_IO_HPP
#define SUBTYPER_MODEL_IO_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "subtyper/baselines.hpp"
#include "subtyper/chimera.hpp"
#include "subtyper/cohort.hpp"
#include "subtyper/hydra.hpp"
#include "subtyper/magic.hpp"
#include "subtyper/opnmf.hpp"

namespace subtyper {

// One fitted model of any kind, together with everything needed to replay the
// preprocessing and assign unseen samples. Persisted as a JSON document with a
// fixed field order so identical fits serialize byte-identically.
struct ModelBundle {
  std::string kind;  // hydra | magic | chimera | kmeans | hierarchical | nmf
  int k = 0;
  std::uint64_t seed = 0;
  bool converged = true;
  bool rescaled = false;  // non-negative min-max rescale applied after standardization
  std::optional<PreprocessModel> preprocess;
  std::vector<std::string> patient_ids;  // fitting patients, cohort row order
  std::vector<int> assignments;          // 1-based subtype per fitting patient

  // hydra
  Polytope polytope;
  double mu = 1.0;
  double objective = 0.0;

  // magic
  std::vector<int> scales;
  std::vector<ScaleBasis> bases;
  std::vector<ScalePartition> pool;
  Eigen::MatrixXd cooccurrence;
  std::vector<int> consensus_labels;  // 1-based
  double scale_consistency = 0.0;

  // chimera
  ChimeraModel chimera;

  // kmeans / magic / hierarchical (assignment rule)
  Eigen::MatrixXd centroids;
  double wcss = 0.0;

  // hierarchical
  Linkage linkage = Linkage::ward;
  Dendrogram dendrogram;

  // nmf
  ScaleBasis nmf_basis;
};

void save_model(const std::filesystem::path& path, const ModelBundle& bundle);
ModelBundle load_model(const std::filesystem::path& path);

// Replays the embedded preprocessing (residualize/standardize, then the
// non-negative rescale when the model was fit on rescaled features).
Cohort preprocess_for_model(const ModelBundle& bundle, const Cohort& raw);

// 0-based subtype per patient row of `raw`, after preprocessing replay.
// Chimera models need control rows in `raw` to anchor the mixture.
std::vector<int> assign_with_model(const ModelBundle& bundle, const Cohort& raw);

// CSV table: id,label,subtype — patients get their 1-based subtype, controls
// the literal marker `reference`.
void write_assignment_table(const std::filesystem::path& path, const Cohort& cohort,
                            const std::vector<int>& patient_labels);

}  // namespace subtyper

#endif
