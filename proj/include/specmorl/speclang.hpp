#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "specmorl/core.hpp"

namespace specmorl {

// Constants in threshold atoms are multiples of 0.1 in [0, 1], stored as
// integer tenths so that rendering and comparison are exact.
inline constexpr int kConstantSteps = 10;

enum class NodeKind : std::uint8_t { Atom, NegAtom, Geq, Leq, And, Or };

// Immutable tree of logical combinations of objectives. Subtrees are shared,
// so copies are cheap and safe to hand across threads.
class SpecAst {
 public:
  // Empty placeholder; every accessor throws ShapeError until assigned.
  SpecAst() = default;
  bool empty() const { return node_ == nullptr; }

  static SpecAst atom(int objective);
  static SpecAst neg_atom(int objective);
  static SpecAst geq(int objective, int tenths);
  static SpecAst leq(int objective, int tenths);
  static SpecAst conj(SpecAst lhs, SpecAst rhs);
  static SpecAst disj(SpecAst lhs, SpecAst rhs);

  NodeKind kind() const;
  bool is_leaf() const;
  // 1-based objective index; leaves only.
  int objective() const;
  // Threshold in tenths; Geq/Leq only.
  int tenths() const;
  double threshold() const { return tenths() / static_cast<double>(kConstantSteps); }
  const SpecAst& lhs() const;
  const SpecAst& rhs() const;

  int leaf_count() const;
  int max_objective() const;

  friend bool operator==(const SpecAst& a, const SpecAst& b);

 private:
  struct Node;
  const Node& node() const;
  explicit SpecAst(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

// Token vocabulary: o1..o6, "-", "&", "|", ">=", "<=", "(", ")", "0.0".."1.0".
enum class Tok : std::uint8_t {
  O1, O2, O3, O4, O5, O6,
  Neg, And, Or, Geq, Leq, LParen, RParen,
  C0, C1, C2, C3, C4, C5, C6, C7, C8, C9, C10,
};
inline constexpr int kVocabSize = 24;

using TokenSequence = std::vector<std::uint8_t>;

std::string_view token_text(std::uint8_t id);
std::uint8_t objective_token(int objective);
std::uint8_t constant_token(int tenths);

// Row-major (length x kVocabSize) one-hot matrix and its inverse.
std::vector<double> one_hot(const TokenSequence& tokens);
TokenSequence from_one_hot(std::span<const double> matrix);

// Grammar: psi := o_n | -o_n | o_n >= c | o_n <= c | ( psi ) | psi & psi | psi | psi
// with & binding tighter than |, both left-associative. Objective indices
// above n_objectives raise IndexError.
SpecAst parse(std::string_view text, int n_objectives = kMaxObjectives);

// Canonical form: tokens separated by single spaces, negation attached to its
// atom ("-o3"), and parentheses around any compound child whose connective
// differs from its parent's or that sits on the right of a same-connective
// parent.
std::string render(const SpecAst& ast);

TokenSequence tokenize(const SpecAst& ast);

// Quantitative semantics: atoms read the reward, negation complements it,
// thresholds are 0/1 with inclusive bounds, & is min and | is max.
double evaluate(std::span<const double> r, const SpecAst& ast);
inline double evaluate(const RewardVector& r, const SpecAst& ast) { return evaluate(r.view(), ast); }

// Random grammar-valid spec with a uniformly drawn leaf budget in
// [1, max_atoms], split recursively; leaf kind, connective, objective and
// constant are all uniform.
SpecAst generate(Rng& rng, int n_objectives, int max_atoms);

// Probes are stored flat: probe i occupies values[i*n .. i*n + n).
struct ProbeSet {
  int n_objectives = 0;
  std::vector<double> values;

  std::size_t size() const { return n_objectives ? values.size() / static_cast<std::size_t>(n_objectives) : 0; }
  std::span<const double> probe(std::size_t i) const {
    return {values.data() + i * static_cast<std::size_t>(n_objectives), static_cast<std::size_t>(n_objectives)};
  }
};

// Full 0.05 grid for n <= 3; otherwise 4096 seeded uniform draws plus the 0.1
// grid along each axis with the remaining axes at 0.5.
ProbeSet canonical_probes(int n_objectives);

std::vector<double> fingerprint(const SpecAst& ast, const ProbeSet& probes);

// A random spec semantically equal to `base`, obtained from
// commutation, reassociation, idempotence and absorption rewrites. The result
// has at most `max_leaves` leaves when base itself fits.
SpecAst equivalent_variant(Rng& rng, const SpecAst& base, int n_objectives, int max_leaves);

// `count` distinct canonical strings all equivalent to `base` (checked by
// fingerprint). The first entry is always base itself.
std::vector<SpecAst> generate_equivalents(Rng& rng, const SpecAst& base, int n_objectives, int count,
                                          int max_leaves);

}  // namespace specmorl
