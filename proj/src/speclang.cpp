#include "specmorl/speclang.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <functional>
#include <set>
#include <utility>

namespace specmorl {

struct SpecAst::Node {
  NodeKind kind;
  int objective = 0;
  int tenths = 0;
  SpecAst lhs;
  SpecAst rhs;
  int leaves = 1;
  int max_objective = 0;
};

namespace {

void check_objective(int objective) {
  if (objective < 1 || objective > kMaxObjectives)
    throw IndexError("objective index o" + std::to_string(objective) + " outside 1.." +
                     std::to_string(kMaxObjectives));
}

void check_tenths(int tenths) {
  if (tenths < 0 || tenths > kConstantSteps)
    throw ParseError("threshold constant outside {0.0, 0.1, ..., 1.0}");
}

constexpr std::array<std::string_view, kVocabSize> kTokenText = {
    "o1", "o2", "o3", "o4", "o5", "o6", "-",   "&",   "|",   ">=",  "<=",  "(",
    ")",  "0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9", "1.0",
};

bool is_connective(NodeKind k) { return k == NodeKind::And || k == NodeKind::Or; }

}  // namespace

SpecAst SpecAst::atom(int objective) {
  check_objective(objective);
  return SpecAst(std::make_shared<const Node>(Node{NodeKind::Atom, objective, 0, SpecAst(), SpecAst(), 1, objective}));
}

SpecAst SpecAst::neg_atom(int objective) {
  check_objective(objective);
  return SpecAst(std::make_shared<const Node>(Node{NodeKind::NegAtom, objective, 0, SpecAst(), SpecAst(), 1, objective}));
}

SpecAst SpecAst::geq(int objective, int tenths) {
  check_objective(objective);
  check_tenths(tenths);
  return SpecAst(std::make_shared<const Node>(Node{NodeKind::Geq, objective, tenths, SpecAst(), SpecAst(), 1, objective}));
}

SpecAst SpecAst::leq(int objective, int tenths) {
  check_objective(objective);
  check_tenths(tenths);
  return SpecAst(std::make_shared<const Node>(Node{NodeKind::Leq, objective, tenths, SpecAst(), SpecAst(), 1, objective}));
}

SpecAst SpecAst::conj(SpecAst lhs, SpecAst rhs) {
  const int leaves = lhs.leaf_count() + rhs.leaf_count();
  const int maxo = std::max(lhs.max_objective(), rhs.max_objective());
  return SpecAst(
      std::make_shared<const Node>(Node{NodeKind::And, 0, 0, std::move(lhs), std::move(rhs), leaves, maxo}));
}

SpecAst SpecAst::disj(SpecAst lhs, SpecAst rhs) {
  const int leaves = lhs.leaf_count() + rhs.leaf_count();
  const int maxo = std::max(lhs.max_objective(), rhs.max_objective());
  return SpecAst(
      std::make_shared<const Node>(Node{NodeKind::Or, 0, 0, std::move(lhs), std::move(rhs), leaves, maxo}));
}

const SpecAst::Node& SpecAst::node() const {
  if (!node_) throw ShapeError("empty spec");
  return *node_;
}

NodeKind SpecAst::kind() const { return node().kind; }
bool SpecAst::is_leaf() const { return !is_connective(node().kind); }
int SpecAst::objective() const { return node().objective; }
int SpecAst::tenths() const { return node().tenths; }
const SpecAst& SpecAst::lhs() const { return node().lhs; }
const SpecAst& SpecAst::rhs() const { return node().rhs; }
int SpecAst::leaf_count() const { return node().leaves; }
int SpecAst::max_objective() const { return node().max_objective; }

bool operator==(const SpecAst& a, const SpecAst& b) {
  if (a.node_ == b.node_) return true;
  if (!a.node_ || !b.node_) return false;
  if (a.kind() != b.kind()) return false;
  switch (a.kind()) {
    case NodeKind::Atom:
    case NodeKind::NegAtom:
      return a.objective() == b.objective();
    case NodeKind::Geq:
    case NodeKind::Leq:
      return a.objective() == b.objective() && a.tenths() == b.tenths();
    case NodeKind::And:
    case NodeKind::Or:
      return a.leaf_count() == b.leaf_count() && a.lhs() == b.lhs() && a.rhs() == b.rhs();
  }
  return false;
}

// ---------------------------------------------------------------- tokens

std::string_view token_text(std::uint8_t id) {
  if (id >= kVocabSize) throw IndexError("token id outside the vocabulary");
  return kTokenText[id];
}

std::uint8_t objective_token(int objective) {
  check_objective(objective);
  return static_cast<std::uint8_t>(static_cast<int>(Tok::O1) + objective - 1);
}

std::uint8_t constant_token(int tenths) {
  check_tenths(tenths);
  return static_cast<std::uint8_t>(static_cast<int>(Tok::C0) + tenths);
}

std::vector<double> one_hot(const TokenSequence& tokens) {
  std::vector<double> m(tokens.size() * kVocabSize, 0.0);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= kVocabSize) throw IndexError("token id outside the vocabulary");
    m[i * kVocabSize + tokens[i]] = 1.0;
  }
  return m;
}

TokenSequence from_one_hot(std::span<const double> matrix) {
  if (matrix.size() % kVocabSize != 0) throw ShapeError("one-hot matrix width is not the vocabulary size");
  TokenSequence out;
  out.reserve(matrix.size() / kVocabSize);
  for (std::size_t row = 0; row < matrix.size() / kVocabSize; ++row) {
    const auto begin = matrix.begin() + static_cast<std::ptrdiff_t>(row * kVocabSize);
    const auto hot = std::max_element(begin, begin + kVocabSize);
    out.push_back(static_cast<std::uint8_t>(hot - begin));
  }
  return out;
}

// ---------------------------------------------------------------- lexer / parser

namespace {

struct Lexeme {
  std::uint8_t id;
  std::size_t pos;
};

std::vector<Lexeme> lex(std::string_view text) {
  std::vector<Lexeme> out;
  std::size_t i = 0;
  auto fail = [&](std::string_view what) {
    throw LexError(std::string(what) + " at offset " + std::to_string(i) + " in \"" + std::string(text) + "\"");
  };
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    switch (c) {
      case '-': out.push_back({static_cast<std::uint8_t>(Tok::Neg), start}); ++i; continue;
      case '&': out.push_back({static_cast<std::uint8_t>(Tok::And), start}); ++i; continue;
      case '|': out.push_back({static_cast<std::uint8_t>(Tok::Or), start}); ++i; continue;
      case '(': out.push_back({static_cast<std::uint8_t>(Tok::LParen), start}); ++i; continue;
      case ')': out.push_back({static_cast<std::uint8_t>(Tok::RParen), start}); ++i; continue;
      case '>':
      case '<':
        if (i + 1 < text.size() && text[i + 1] == '=') {
          out.push_back({static_cast<std::uint8_t>(c == '>' ? Tok::Geq : Tok::Leq), start});
          i += 2;
          continue;
        }
        fail("expected '=' after comparison");
        break;
      default:
        break;
    }
    if (c == 'o') {
      ++i;
      std::size_t digits_end = i;
      while (digits_end < text.size() && std::isdigit(static_cast<unsigned char>(text[digits_end]))) ++digits_end;
      if (digits_end == i) fail("objective without index");
      const std::string_view digits = text.substr(i, digits_end - i);
      if (digits.size() != 1 || digits[0] < '1' || digits[0] > '6') fail("unknown objective token");
      out.push_back({objective_token(digits[0] - '0'), start});
      i = digits_end;
      continue;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      // Exactly one of "0.0" .. "0.9" or "1.0".
      if (i + 2 < text.size() && text[i + 1] == '.' && std::isdigit(static_cast<unsigned char>(text[i + 2]))) {
        const bool trailing_digit =
            i + 3 < text.size() && std::isdigit(static_cast<unsigned char>(text[i + 3]));
        const int whole = c - '0';
        const int frac = text[i + 2] - '0';
        if (!trailing_digit && (whole == 0 || (whole == 1 && frac == 0))) {
          out.push_back({constant_token(whole * 10 + frac), start});
          i += 3;
          continue;
        }
      }
      fail("unknown constant token");
    }
    fail("unexpected character");
  }
  return out;
}

class Parser {
 public:
  Parser(std::string_view text, std::vector<Lexeme> tokens, int n_objectives)
      : text_(text), tokens_(std::move(tokens)), n_objectives_(n_objectives) {}

  SpecAst parse_all() {
    if (tokens_.empty()) fail("empty specification");
    SpecAst result = parse_or();
    if (pos_ != tokens_.size()) fail("unexpected trailing token");
    return result;
  }

 private:
  [[noreturn]] void fail(std::string_view what) const {
    std::string where = pos_ < tokens_.size() ? " at offset " + std::to_string(tokens_[pos_].pos) : " at end";
    throw ParseError(std::string(what) + where + " in \"" + std::string(text_) + "\"");
  }

  bool peek(Tok t) const { return pos_ < tokens_.size() && tokens_[pos_].id == static_cast<std::uint8_t>(t); }

  SpecAst parse_or() {
    SpecAst acc = parse_and();
    while (peek(Tok::Or)) {
      ++pos_;
      acc = SpecAst::disj(std::move(acc), parse_and());
    }
    return acc;
  }

  SpecAst parse_and() {
    SpecAst acc = parse_primary();
    while (peek(Tok::And)) {
      ++pos_;
      acc = SpecAst::conj(std::move(acc), parse_primary());
    }
    return acc;
  }

  int parse_objective() {
    if (pos_ >= tokens_.size()) fail("expected objective");
    const std::uint8_t id = tokens_[pos_].id;
    if (id > static_cast<std::uint8_t>(Tok::O6)) fail("expected objective");
    const int objective = id - static_cast<int>(Tok::O1) + 1;
    if (objective > n_objectives_)
      throw IndexError("objective o" + std::to_string(objective) + " exceeds the " + std::to_string(n_objectives_) +
                       " objectives available");
    ++pos_;
    return objective;
  }

  SpecAst parse_primary() {
    if (peek(Tok::LParen)) {
      ++pos_;
      SpecAst inner = parse_or();
      if (!peek(Tok::RParen)) fail("expected ')'");
      ++pos_;
      return inner;
    }
    if (peek(Tok::Neg)) {
      ++pos_;
      if (!(pos_ < tokens_.size() && tokens_[pos_].id <= static_cast<std::uint8_t>(Tok::O6)))
        fail("negation applies only to an objective");
      return SpecAst::neg_atom(parse_objective());
    }
    const int objective = parse_objective();
    if (peek(Tok::Geq) || peek(Tok::Leq)) {
      const bool geq = peek(Tok::Geq);
      ++pos_;
      if (pos_ >= tokens_.size() || tokens_[pos_].id < static_cast<std::uint8_t>(Tok::C0))
        fail("expected constant after comparison");
      const int tenths = tokens_[pos_].id - static_cast<int>(Tok::C0);
      ++pos_;
      return geq ? SpecAst::geq(objective, tenths) : SpecAst::leq(objective, tenths);
    }
    return SpecAst::atom(objective);
  }

  std::string_view text_;
  std::vector<Lexeme> tokens_;
  int n_objectives_;
  std::size_t pos_ = 0;
};

void emit(const SpecAst& ast, TokenSequence& out) {
  switch (ast.kind()) {
    case NodeKind::Atom:
      out.push_back(objective_token(ast.objective()));
      return;
    case NodeKind::NegAtom:
      out.push_back(static_cast<std::uint8_t>(Tok::Neg));
      out.push_back(objective_token(ast.objective()));
      return;
    case NodeKind::Geq:
    case NodeKind::Leq:
      out.push_back(objective_token(ast.objective()));
      out.push_back(static_cast<std::uint8_t>(ast.kind() == NodeKind::Geq ? Tok::Geq : Tok::Leq));
      out.push_back(constant_token(ast.tenths()));
      return;
    case NodeKind::And:
    case NodeKind::Or: {
      auto child = [&](const SpecAst& c, bool right) {
        const bool wrap = !c.is_leaf() && (c.kind() != ast.kind() || right);
        if (wrap) out.push_back(static_cast<std::uint8_t>(Tok::LParen));
        emit(c, out);
        if (wrap) out.push_back(static_cast<std::uint8_t>(Tok::RParen));
      };
      child(ast.lhs(), false);
      out.push_back(static_cast<std::uint8_t>(ast.kind() == NodeKind::And ? Tok::And : Tok::Or));
      child(ast.rhs(), true);
      return;
    }
  }
}

}  // namespace

SpecAst parse(std::string_view text, int n_objectives) {
  if (n_objectives < 1 || n_objectives > kMaxObjectives) throw ConfigError("objective count outside 1..6");
  Parser parser(text, lex(text), n_objectives);
  return parser.parse_all();
}

TokenSequence tokenize(const SpecAst& ast) {
  TokenSequence out;
  emit(ast, out);
  return out;
}

std::string render(const SpecAst& ast) {
  const TokenSequence tokens = tokenize(ast);
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0 && tokens[i - 1] != static_cast<std::uint8_t>(Tok::Neg)) out += ' ';
    out += token_text(tokens[i]);
  }
  return out;
}

// ---------------------------------------------------------------- semantics

double evaluate(std::span<const double> r, const SpecAst& ast) {
  switch (ast.kind()) {
    case NodeKind::And:
      return std::min(evaluate(r, ast.lhs()), evaluate(r, ast.rhs()));
    case NodeKind::Or:
      return std::max(evaluate(r, ast.lhs()), evaluate(r, ast.rhs()));
    default:
      break;
  }
  const auto index = static_cast<std::size_t>(ast.objective() - 1);
  if (index >= r.size())
    throw IndexError("spec reads objective o" + std::to_string(ast.objective()) + " but the reward vector has " +
                     std::to_string(r.size()) + " entries");
  const double value = r[index];
  switch (ast.kind()) {
    case NodeKind::Atom:
      return value;
    case NodeKind::NegAtom:
      return 1.0 - value;
    case NodeKind::Geq:
      return value >= ast.threshold() ? 1.0 : 0.0;
    case NodeKind::Leq:
      return value <= ast.threshold() ? 1.0 : 0.0;
    default:
      return 0.0;
  }
}

// ---------------------------------------------------------------- generation

namespace {

SpecAst random_leaf(Rng& rng, int n_objectives) {
  const int kind = uniform_int(rng, 0, 3);
  const int objective = uniform_int(rng, 1, n_objectives);
  switch (kind) {
    case 0:
      return SpecAst::atom(objective);
    case 1:
      return SpecAst::neg_atom(objective);
    case 2:
      return SpecAst::geq(objective, uniform_int(rng, 0, kConstantSteps));
    default:
      return SpecAst::leq(objective, uniform_int(rng, 0, kConstantSteps));
  }
}

SpecAst random_tree(Rng& rng, int n_objectives, int leaves) {
  if (leaves == 1) return random_leaf(rng, n_objectives);
  const int left = uniform_int(rng, 1, leaves - 1);
  const bool conj = uniform_int(rng, 0, 1) == 0;
  SpecAst lhs = random_tree(rng, n_objectives, left);
  SpecAst rhs = random_tree(rng, n_objectives, leaves - left);
  return conj ? SpecAst::conj(std::move(lhs), std::move(rhs)) : SpecAst::disj(std::move(lhs), std::move(rhs));
}

}  // namespace

SpecAst generate(Rng& rng, int n_objectives, int max_atoms) {
  if (n_objectives < 1 || n_objectives > kMaxObjectives) throw ConfigError("objective count outside 1..6");
  if (max_atoms < 1) throw ConfigError("max_atoms must be at least 1");
  const int leaves = uniform_int(rng, 1, max_atoms);
  return random_tree(rng, n_objectives, leaves);
}

// ---------------------------------------------------------------- fingerprints

ProbeSet canonical_probes(int n_objectives) {
  if (n_objectives < 1 || n_objectives > kMaxObjectives) throw ConfigError("objective count outside 1..6");
  ProbeSet probes;
  probes.n_objectives = n_objectives;
  const auto n = static_cast<std::size_t>(n_objectives);
  if (n_objectives <= 3) {
    constexpr int kSteps = 20;  // 0.05 resolution
    std::size_t total = 1;
    for (std::size_t k = 0; k < n; ++k) total *= kSteps + 1;
    probes.values.reserve(total * n);
    for (std::size_t i = 0; i < total; ++i) {
      std::size_t rest = i;
      for (std::size_t k = 0; k < n; ++k) {
        probes.values.push_back(static_cast<double>(rest % (kSteps + 1)) / kSteps);
        rest /= kSteps + 1;
      }
    }
    return probes;
  }
  Rng rng(0x5eedf1a9ULL);
  constexpr int kDraws = 4096;
  for (int i = 0; i < kDraws; ++i)
    for (std::size_t k = 0; k < n; ++k) probes.values.push_back(uniform01(rng));
  for (std::size_t axis = 0; axis < n; ++axis) {
    for (int step = 0; step <= kConstantSteps; ++step) {
      for (std::size_t k = 0; k < n; ++k)
        probes.values.push_back(k == axis ? static_cast<double>(step) / kConstantSteps : 0.5);
    }
  }
  return probes;
}

std::vector<double> fingerprint(const SpecAst& ast, const ProbeSet& probes) {
  if (probes.size() == 0) throw ConfigError("fingerprint needs at least one probe");
  std::vector<double> out;
  out.reserve(probes.size());
  for (std::size_t i = 0; i < probes.size(); ++i) out.push_back(evaluate(probes.probe(i), ast));
  return out;
}

// ---------------------------------------------------------------- equivalent rewrites

namespace {

SpecAst combine(NodeKind kind, SpecAst lhs, SpecAst rhs) {
  return kind == NodeKind::And ? SpecAst::conj(std::move(lhs), std::move(rhs))
                               : SpecAst::disj(std::move(lhs), std::move(rhs));
}

int node_count(const SpecAst& a) { return a.is_leaf() ? 1 : 1 + node_count(a.lhs()) + node_count(a.rhs()); }

SpecAst rewrite_at(Rng& rng, const SpecAst& x, int n_objectives, int spare_leaves) {
  const int choice = uniform_int(rng, 0, 9);
  const NodeKind random_conn = uniform_int(rng, 0, 1) == 0 ? NodeKind::And : NodeKind::Or;
  if (!x.is_leaf() && choice < 3) return combine(x.kind(), x.rhs(), x.lhs());
  if (!x.is_leaf() && choice < 5) {
    if (!x.lhs().is_leaf() && x.lhs().kind() == x.kind())
      return combine(x.kind(), x.lhs().lhs(), combine(x.kind(), x.lhs().rhs(), x.rhs()));
    if (!x.rhs().is_leaf() && x.rhs().kind() == x.kind())
      return combine(x.kind(), combine(x.kind(), x.lhs(), x.rhs().lhs()), x.rhs().rhs());
  }
  if (choice < 8 && spare_leaves >= x.leaf_count()) {
    return combine(random_conn, x, x);
  }
  if (spare_leaves >= x.leaf_count() + 1) {
    // x & (x | y) and x | (x & y) both reduce to x.
    SpecAst y = random_leaf(rng, n_objectives);
    const NodeKind inner = random_conn == NodeKind::And ? NodeKind::Or : NodeKind::And;
    SpecAst absorbed = uniform_int(rng, 0, 1) == 0 ? combine(inner, x, y) : combine(inner, y, x);
    return uniform_int(rng, 0, 1) == 0 ? combine(random_conn, x, absorbed) : combine(random_conn, absorbed, x);
  }
  if (!x.is_leaf()) return combine(x.kind(), x.rhs(), x.lhs());
  return x;
}

SpecAst rewrite_node(Rng& rng, const SpecAst& x, int& target, int n_objectives, int spare_leaves) {
  if (target == 0) {
    target = -1;
    return rewrite_at(rng, x, n_objectives, spare_leaves);
  }
  --target;
  if (x.is_leaf()) return x;
  SpecAst lhs = rewrite_node(rng, x.lhs(), target, n_objectives, spare_leaves);
  SpecAst rhs = target < 0 ? x.rhs() : rewrite_node(rng, x.rhs(), target, n_objectives, spare_leaves);
  return combine(x.kind(), std::move(lhs), std::move(rhs));
}

}  // namespace

SpecAst equivalent_variant(Rng& rng, const SpecAst& base, int n_objectives, int max_leaves) {
  SpecAst current = base;
  const int rewrites = uniform_int(rng, 1, 4);
  for (int i = 0; i < rewrites; ++i) {
    int target = uniform_int(rng, 0, node_count(current) - 1);
    const int spare = max_leaves - current.leaf_count();
    current = rewrite_node(rng, current, target, n_objectives, spare);
  }
  return current;
}

std::vector<SpecAst> generate_equivalents(Rng& rng, const SpecAst& base, int n_objectives, int count,
                                          int max_leaves) {
  if (count < 1) throw ConfigError("equivalence bucket needs at least one member");
  const ProbeSet probes = canonical_probes(n_objectives);
  const std::vector<double> target = fingerprint(base, probes);
  std::vector<SpecAst> out{base};
  std::set<std::string> seen{render(base)};
  const long budget = 500L * count;
  for (long attempt = 0; static_cast<int>(out.size()) < count; ++attempt) {
    if (attempt >= budget)
      throw GenerationStall("could not find " + std::to_string(count) + " distinct specs equivalent to " +
                            render(base));
    // Walk from a random existing member so variants spread out.
    const SpecAst& seed = out[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(out.size()) - 1))];
    SpecAst candidate = equivalent_variant(rng, seed, n_objectives, max_leaves);
    if (candidate.leaf_count() > max_leaves) continue;
    std::string text = render(candidate);
    if (seen.count(text)) continue;
    if (fingerprint(candidate, probes) != target) continue;
    seen.insert(std::move(text));
    out.push_back(std::move(candidate));
  }
  return out;
}

}  // namespace specmorl
