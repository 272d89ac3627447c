#include "subtyper/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace subtyper {

namespace {

double squared_distance(const Eigen::MatrixXd& X, Eigen::Index row, const Eigen::MatrixXd& C,
                        Eigen::Index centroid) {
  return (X.row(row) - C.row(centroid)).squaredNorm();
}

}  // namespace

Eigen::MatrixXd kmeanspp_seeds(const Eigen::MatrixXd& X, int k, Rng& rng) {
  const Eigen::Index n = X.rows();
  Eigen::MatrixXd centroids(k, X.cols());
  centroids.row(0) = X.row(static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n))));
  Eigen::VectorXd d2 = (X.rowwise() - centroids.row(0)).rowwise().squaredNorm();
  for (int j = 1; j < k; ++j) {
    const double total = d2.sum();
    Eigen::Index pick = 0;
    if (total > 0.0) {
      double target = rng.uniform01() * total;
      double running = 0.0;
      pick = n - 1;
      for (Eigen::Index i = 0; i < n; ++i) {
        running += d2[i];
        if (running > target) {
          pick = i;
          break;
        }
      }
    } else {
      pick = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::uint64_t>(n)));
    }
    centroids.row(j) = X.row(pick);
    d2 = d2.cwiseMin((X.rowwise() - centroids.row(j)).rowwise().squaredNorm());
  }
  return centroids;
}

std::vector<int> nearest_centroid_labels(const Eigen::MatrixXd& X,
                                         const Eigen::MatrixXd& centroids) {
  const Eigen::Index n = X.rows();
  const Eigen::Index k = centroids.rows();
  std::vector<int> labels(static_cast<std::size_t>(n), 0);
  for (Eigen::Index i = 0; i < n; ++i) {
    double best = squared_distance(X, i, centroids, 0);
    int best_j = 0;
    for (Eigen::Index j = 1; j < k; ++j) {
      const double d = squared_distance(X, i, centroids, j);
      if (d < best) {
        best = d;
        best_j = static_cast<int>(j);
      }
    }
    labels[static_cast<std::size_t>(i)] = best_j;
  }
  return labels;
}

namespace {

struct LloydOutcome {
  std::vector<int> labels;
  Eigen::MatrixXd centroids;
  double wcss = 0.0;
  std::vector<double> trace;
  int iterations = 0;
  bool converged = false;
};

double wcss_of(const Eigen::MatrixXd& X, const std::vector<int>& labels,
               const Eigen::MatrixXd& centroids) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    total += squared_distance(X, i, centroids, labels[static_cast<std::size_t>(i)]);
  }
  return total;
}

LloydOutcome lloyd(const Eigen::MatrixXd& X, int k, Rng& rng, int max_iter) {
  const Eigen::Index n = X.rows();
  LloydOutcome out;
  out.centroids = kmeanspp_seeds(X, k, rng);
  out.labels.assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < max_iter; ++iter) {
    std::vector<int> labels = nearest_centroid_labels(X, out.centroids);
    // Refill empty clusters with the point farthest from its assigned
    // centroid; that point's own term leaves the objective, so the recorded
    // trace stays non-increasing.
    std::vector<Eigen::Index> counts(static_cast<std::size_t>(k), 0);
    for (int lab : labels) ++counts[static_cast<std::size_t>(lab)];
    for (int j = 0; j < k; ++j) {
      if (counts[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index farthest = 0;
      double worst = -1.0;
      for (Eigen::Index i = 0; i < n; ++i) {
        const std::size_t lab = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
        if (counts[lab] <= 1) continue;  // do not empty another cluster
        const double d = squared_distance(X, i, out.centroids, labels[static_cast<std::size_t>(i)]);
        if (d > worst) {
          worst = d;
          farthest = i;
        }
      }
      if (worst < 0.0) break;  // fewer distinct points than clusters
      --counts[static_cast<std::size_t>(labels[static_cast<std::size_t>(farthest)])];
      labels[static_cast<std::size_t>(farthest)] = j;
      counts[static_cast<std::size_t>(j)] = 1;
      out.centroids.row(j) = X.row(farthest);
    }

    const bool unchanged = (labels == out.labels);
    out.labels = labels;

    // means of the new assignment
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, X.cols());
    std::vector<Eigen::Index> sizes(static_cast<std::size_t>(k), 0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const std::size_t lab = static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]);
      sums.row(static_cast<Eigen::Index>(lab)) += X.row(i);
      ++sizes[lab];
    }
    for (int j = 0; j < k; ++j) {
      if (sizes[static_cast<std::size_t>(j)] > 0) {
        out.centroids.row(j) = sums.row(j) / static_cast<double>(sizes[static_cast<std::size_t>(j)]);
      }
    }
    out.trace.push_back(wcss_of(X, labels, out.centroids));
    out.iterations = iter + 1;
    if (unchanged) {
      out.converged = true;
      break;
    }
  }
  out.wcss = out.trace.empty() ? 0.0 : out.trace.back();
  return out;
}

}  // namespace

KmeansResult kmeans(const Eigen::MatrixXd& X, int k, std::uint64_t seed, int max_iter,
                    int n_restarts) {
  if (X.rows() == 0 || X.cols() == 0) throw ValidationError("kmeans: empty input matrix");
  if (k < 1) throw ValidationError("kmeans: k must be at least 1");
  if (k > X.rows()) throw ValidationError("kmeans: k exceeds the number of rows");
  if (n_restarts < 1) throw ValidationError("kmeans: n_restarts must be at least 1");
  if (!X.allFinite()) throw ValidationError("kmeans: input contains non-finite values");

  LloydOutcome best;
  bool have = false;
  for (int r = 0; r < n_restarts; ++r) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(r)));
    LloydOutcome cur = lloyd(X, k, rng, max_iter);
    if (!have || cur.wcss < best.wcss) {
      best = std::move(cur);
      have = true;
    }
  }
  KmeansResult result;
  result.labels = std::move(best.labels);
  result.centroids = std::move(best.centroids);
  result.wcss = best.wcss;
  result.wcss_trace = std::move(best.trace);
  result.iterations = best.iterations;
  result.converged = best.converged;
  return result;
}

Linkage linkage_from_string(const std::string& name) {
  if (name == "single") return Linkage::single;
  if (name == "complete") return Linkage::complete;
  if (name == "average") return Linkage::average;
  if (name == "ward") return Linkage::ward;
  throw ValidationError("unknown linkage '" + name +
                        "' (expected single, complete, average, or ward)");
}

std::string linkage_to_string(Linkage linkage) {
  switch (linkage) {
    case Linkage::single: return "single";
    case Linkage::complete: return "complete";
    case Linkage::average: return "average";
    case Linkage::ward: return "ward";
  }
  throw std::logic_error("unreachable");
}

Dendrogram hierarchical(const Eigen::MatrixXd& X, Linkage linkage) {
  const Eigen::Index n = X.rows();
  if (n == 0 || X.cols() == 0) throw ValidationError("hierarchical: empty input matrix");
  if (!X.allFinite()) throw ValidationError("hierarchical: input contains non-finite values");

  Dendrogram out;
  out.n_leaves = static_cast<int>(n);
  if (n == 1) return out;

  // Ward runs Lance-Williams on squared distances and reports sqrt heights;
  // the other linkages work on the distances themselves.
  const bool squared = (linkage == Linkage::ward);

  struct Node {
    int id;
    Eigen::Index size;
  };
  std::vector<Node> active;
  active.reserve(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) active.push_back({static_cast<int>(i), 1});

  const std::size_t m = static_cast<std::size_t>(n);
  std::vector<std::vector<double>> dist(m, std::vector<double>(m, 0.0));
  for (std::size_t a = 0; a < m; ++a) {
    for (std::size_t b = a + 1; b < m; ++b) {
      const double d2 = (X.row(static_cast<Eigen::Index>(a)) - X.row(static_cast<Eigen::Index>(b)))
                            .squaredNorm();
      dist[a][b] = dist[b][a] = squared ? d2 : std::sqrt(d2);
    }
  }

  int next_id = static_cast<int>(n);
  while (active.size() > 1) {
    // lowest distance; ties by lexicographically smallest (min id, max id)
    std::size_t pick_a = 0, pick_b = 1;
    double best = std::numeric_limits<double>::infinity();
    int best_lo = 0, best_hi = 0;
    for (std::size_t a = 0; a < active.size(); ++a) {
      for (std::size_t b = a + 1; b < active.size(); ++b) {
        const double d = dist[a][b];
        const int lo = std::min(active[a].id, active[b].id);
        const int hi = std::max(active[a].id, active[b].id);
        if (d < best || (d == best && (lo < best_lo || (lo == best_lo && hi < best_hi)))) {
          best = d;
          best_lo = lo;
          best_hi = hi;
          pick_a = a;
          pick_b = b;
        }
      }
    }

    const Eigen::Index ni = active[pick_a].size;
    const Eigen::Index nj = active[pick_b].size;
    Merge merge;
    merge.left = best_lo;
    merge.right = best_hi;
    merge.distance = squared ? std::sqrt(best) : best;
    merge.id = next_id++;
    out.merges.push_back(merge);

    // Lance-Williams update of the merged cluster against the rest
    for (std::size_t c = 0; c < active.size(); ++c) {
      if (c == pick_a || c == pick_b) continue;
      const double dik = dist[pick_a][c];
      const double djk = dist[pick_b][c];
      const Eigen::Index nk = active[c].size;
      double d = 0.0;
      switch (linkage) {
        case Linkage::single: d = std::min(dik, djk); break;
        case Linkage::complete: d = std::max(dik, djk); break;
        case Linkage::average:
          d = (static_cast<double>(ni) * dik + static_cast<double>(nj) * djk) /
              static_cast<double>(ni + nj);
          break;
        case Linkage::ward:
          d = (static_cast<double>(ni + nk) * dik + static_cast<double>(nj + nk) * djk -
               static_cast<double>(nk) * best) /
              static_cast<double>(ni + nj + nk);
          break;
      }
      dist[pick_a][c] = dist[c][pick_a] = d;
    }
    active[pick_a] = {merge.id, ni + nj};

    const std::size_t last = active.size() - 1;
    if (pick_b != last) {
      active[pick_b] = active[last];
      for (std::size_t c = 0; c < active.size(); ++c) {
        dist[pick_b][c] = dist[last][c];
        dist[c][pick_b] = dist[c][last];
      }
      dist[pick_b][pick_b] = 0.0;
    }
    active.pop_back();
  }
  return out;
}

std::vector<int> cut_dendrogram(const Dendrogram& dendrogram, int k) {
  const int n = dendrogram.n_leaves;
  if (n < 1) throw ValidationError("cut_dendrogram: dendrogram has no leaves");
  if (static_cast<int>(dendrogram.merges.size()) != n - 1) {
    throw ValidationError("cut_dendrogram: dendrogram is incomplete");
  }
  if (k < 1 || k > n) {
    throw ValidationError("cut_dendrogram: k must be between 1 and the number of leaves");
  }

  // apply all but the last k-1 merges, then label components by first
  // appearance over the sample order
  std::vector<int> parent(static_cast<std::size_t>(2 * n - 1));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&parent](int x) {
    while (parent[static_cast<std::size_t>(x)] != x) {
      parent[static_cast<std::size_t>(x)] =
          parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      x = parent[static_cast<std::size_t>(x)];
    }
    return x;
  };
  const int applied = n - k;
  for (int m = 0; m < applied; ++m) {
    const Merge& merge = dendrogram.merges[static_cast<std::size_t>(m)];
    parent[static_cast<std::size_t>(find(merge.left))] = merge.id;
    parent[static_cast<std::size_t>(find(merge.right))] = merge.id;
  }

  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  std::vector<int> root_label(static_cast<std::size_t>(2 * n - 1), -1);
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int root = find(i);
    if (root_label[static_cast<std::size_t>(root)] < 0) {
      root_label[static_cast<std::size_t>(root)] = next++;
    }
    labels[static_cast<std::size_t>(i)] = root_label[static_cast<std::size_t>(root)];
  }
  return labels;
}

}  // namespace subtyper
