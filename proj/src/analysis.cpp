#include "specmorl/analysis.hpp"

#include <algorithm>
#include <map>

#include "specmorl/agent.hpp"

namespace specmorl {

std::vector<double> value_map(const QNetwork& net, const GridWorld& world, std::span<const double> goal_vec) {
  return greedy_table(net, world, goal_vec).values;
}

std::vector<Vector> interpolate(const Vector& a, const Vector& b, int k) {
  if (k < 2) throw ConfigError("interpolation needs at least 2 steps");
  if (a.size() != b.size()) throw ShapeError("interpolation endpoints differ in width");
  std::vector<Vector> out;
  for (int i = 0; i < k; ++i) {
    const double t = static_cast<double>(i) / (k - 1);
    out.push_back((1.0 - t) * a + t * b);
  }
  return out;
}

SpecBuckets equivalence_buckets(int n_objectives, int buckets, int per_bucket, std::uint64_t seed, int base_atoms,
                                int max_leaves) {
  if (buckets < 1 || per_bucket < 1) throw ConfigError("bucket counts must be positive");
  Rng rng(seed);
  const ProbeSet probes = canonical_probes(n_objectives);
  std::vector<std::vector<double>> taken;
  SpecBuckets out;
  const int budget = 1000 * buckets;
  for (int attempt = 0; static_cast<int>(taken.size()) < buckets; ++attempt) {
    if (attempt >= budget) throw GenerationStall("could not find " + std::to_string(buckets) + " distinct buckets");
    const SpecAst base = generate(rng, n_objectives, base_atoms);
    std::vector<double> fp = fingerprint(base, probes);
    if (std::find(taken.begin(), taken.end(), fp) != taken.end()) continue;
    std::vector<SpecAst> members;
    try {
      members = generate_equivalents(rng, base, n_objectives, per_bucket, max_leaves);
    } catch (const GenerationStall&) {
      continue;
    }
    const int label = static_cast<int>(taken.size());
    taken.push_back(std::move(fp));
    for (auto& m : members) {
      out.specs.push_back(std::move(m));
      out.labels.push_back(label);
    }
  }
  return out;
}

std::vector<int> fingerprint_labels(const std::vector<SpecAst>& specs, int n_objectives) {
  const ProbeSet probes = canonical_probes(n_objectives);
  std::map<std::vector<double>, int> seen;
  std::vector<int> labels;
  for (const auto& s : specs) {
    auto [it, inserted] = seen.emplace(fingerprint(s, probes), static_cast<int>(seen.size()));
    labels.push_back(it->second);
  }
  return labels;
}

double centroid_purity(const Matrix& rows, std::span<const int> labels) {
  if (rows.rows() != static_cast<Eigen::Index>(labels.size())) throw ShapeError("one label per row");
  if (labels.empty()) throw ShapeError("no rows");
  std::map<int, int> index;
  for (int l : labels) index.emplace(l, static_cast<int>(index.size()));
  int slot = 0;
  for (auto& [label, i] : index) i = slot++;
  Matrix centroids = Matrix::Zero(static_cast<Eigen::Index>(index.size()), rows.cols());
  std::vector<int> counts(index.size(), 0);
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const int c = index.at(labels[static_cast<std::size_t>(r)]);
    centroids.row(c) += rows.row(r);
    ++counts[static_cast<std::size_t>(c)];
  }
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    centroids.row(c) /= counts[static_cast<std::size_t>(c)];
    const double norm = centroids.row(c).norm();
    if (norm > 0.0) centroids.row(c) /= norm;
  }
  int correct = 0;
  for (Eigen::Index r = 0; r < rows.rows(); ++r) {
    const double norm = rows.row(r).norm();
    Eigen::Index best = 0;
    double best_sim = -2.0;
    for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
      const double sim = norm > 0.0 ? centroids.row(c).dot(rows.row(r)) / norm : 0.0;
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    if (best == index.at(labels[static_cast<std::size_t>(r)])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(rows.rows());
}

}  // namespace specmorl
