#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "specmorl/gridworld.hpp"
#include "specmorl/neural.hpp"
#include "specmorl/speclang.hpp"

namespace specmorl {

// max_a Q(s, a) for every cell, row-major, for a goal vector fed to the head.
std::vector<double> value_map(const QNetwork& net, const GridWorld& world, std::span<const double> goal_vec);

// k blends (1 - t) a + t b with t = i / (k - 1), i = 0..k-1; k >= 2.
std::vector<Vector> interpolate(const Vector& a, const Vector& b, int k);

struct SpecBuckets {
  std::vector<SpecAst> specs;
  std::vector<int> labels;  // bucket index per spec
};

// `buckets` groups of `per_bucket` distinct specs; members of a group share a
// fingerprint and groups have pairwise distinct fingerprints. Group bases are
// random specs of at most `base_atoms` leaves; members have at most
// `max_leaves` leaves.
SpecBuckets equivalence_buckets(int n_objectives, int buckets, int per_bucket, std::uint64_t seed, int base_atoms = 2,
                                int max_leaves = 6);

// Label per spec: index of its fingerprint in order of first appearance.
std::vector<int> fingerprint_labels(const std::vector<SpecAst>& specs, int n_objectives);

// Fraction of rows whose nearest label centroid (by cosine distance) is their
// own label. Centroids are the mean row of each label.
double centroid_purity(const Matrix& rows, std::span<const int> labels);

}  // namespace specmorl
