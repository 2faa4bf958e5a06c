#include "specmorl/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace specmorl {

std::vector<double> scalar_reward_table(const GridWorld& world, const SpecAst& spec) {
  std::vector<double> table(static_cast<std::size_t>(world.num_cells()));
  for (int i = 0; i < world.num_cells(); ++i)
    table[static_cast<std::size_t>(i)] = evaluate(world.reward_vector(world.cell_at(i)), spec);
  return table;
}

std::vector<double> linear_reward_table(const GridWorld& world, std::span<const double> weights) {
  if (weights.size() != static_cast<std::size_t>(world.n_objectives()))
    throw ShapeError("weight vector length differs from the objective count");
  std::vector<double> table(static_cast<std::size_t>(world.num_cells()));
  for (int i = 0; i < world.num_cells(); ++i) {
    const RewardVector r = world.reward_vector(world.cell_at(i));
    double acc = 0.0;
    for (int k = 0; k < r.size; ++k) acc += weights[static_cast<std::size_t>(k)] * r[k];
    table[static_cast<std::size_t>(i)] = acc;
  }
  return table;
}

ScalarMDP ScalarMDP::from_spec(const GridWorld& world, const SpecAst& spec, double gamma) {
  return from_table(world, scalar_reward_table(world, spec), gamma);
}

ScalarMDP ScalarMDP::from_weights(const GridWorld& world, std::span<const double> weights, double gamma) {
  return from_table(world, linear_reward_table(world, weights), gamma);
}

ScalarMDP ScalarMDP::from_table(const GridWorld& world, std::vector<double> table, double gamma) {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("discount must lie in (0,1)");
  if (table.size() != static_cast<std::size_t>(world.num_cells())) throw ShapeError("reward table size");
  return {&world, gamma, std::move(table)};
}

std::array<double, kNumActions> action_values(const ScalarMDP& mdp, std::span<const double> v, Cell c) {
  std::array<double, kNumActions> q{};
  for (int a = 0; a < kNumActions; ++a) {
    double acc = 0.0;
    for (const Outcome& o : mdp.world->kernel(c, static_cast<Action>(a))) {
      const auto j = static_cast<std::size_t>(mdp.world->cell_index(o.cell));
      acc += o.probability * (mdp.scalar_reward[j] + mdp.gamma * v[j]);
    }
    q[static_cast<std::size_t>(a)] = acc;
  }
  return q;
}

namespace {

// Values that differ by less than this are treated as tied so the fixed
// action order decides.
constexpr double kTieTolerance = 1e-9;

Action argmax_fixed_order(const std::array<double, kNumActions>& q) {
  int best = 0;
  for (int a = 1; a < kNumActions; ++a)
    if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)] + kTieTolerance) best = a;
  return static_cast<Action>(best);
}

}  // namespace

double bellman_residual(const ScalarMDP& mdp, std::span<const double> v) {
  double worst = 0.0;
  for (int i = 0; i < mdp.world->num_cells(); ++i) {
    const auto q = action_values(mdp, v, mdp.world->cell_at(i));
    const double best = *std::max_element(q.begin(), q.end());
    worst = std::max(worst, std::abs(best - v[static_cast<std::size_t>(i)]));
  }
  return worst;
}

std::vector<Action> greedy_policy(const ScalarMDP& mdp, std::span<const double> v) {
  std::vector<Action> policy(static_cast<std::size_t>(mdp.world->num_cells()));
  for (int i = 0; i < mdp.world->num_cells(); ++i)
    policy[static_cast<std::size_t>(i)] = argmax_fixed_order(action_values(mdp, v, mdp.world->cell_at(i)));
  return policy;
}

ValueTable solve(const ScalarMDP& mdp, double tol) {
  if (!(tol > 0.0)) throw ConfigError("tolerance must be positive");
  if (!(mdp.gamma < 1.0)) throw ConfigError("discount must be below 1");
  const GridWorld& world = *mdp.world;
  ValueTable out;
  out.width = world.width();
  out.height = world.height();
  out.v.assign(static_cast<std::size_t>(world.num_cells()), 0.0);
  std::vector<double> next(out.v.size());
  for (;;) {
    double delta = 0.0;
    for (int i = 0; i < world.num_cells(); ++i) {
      const auto q = action_values(mdp, out.v, world.cell_at(i));
      const double best = *std::max_element(q.begin(), q.end());
      delta = std::max(delta, std::abs(best - out.v[static_cast<std::size_t>(i)]));
      next[static_cast<std::size_t>(i)] = best;
    }
    out.v.swap(next);
    ++out.iterations;
    if (delta < tol) break;
  }
  out.policy = greedy_policy(mdp, out.v);
  return out;
}

Policy Policy::table(std::vector<Action> actions) {
  Policy p;
  p.table_ = std::move(actions);
  return p;
}

Policy Policy::uniform_random(std::uint64_t seed) {
  Policy p;
  p.rng_.emplace(seed);
  return p;
}

Action Policy::choose(Cell c, const GridWorld& world) {
  if (rng_) return static_cast<Action>(uniform_int(*rng_, 0, kNumActions - 1));
  const auto idx = static_cast<std::size_t>(world.cell_index(c));
  if (idx >= table_.size()) throw ShapeError("policy table smaller than the grid");
  return table_[idx];
}

ReturnStats policy_return(const GridWorld& world, Policy policy, std::span<const double> scalar_reward, double gamma,
                          int episodes, Rng& rng) {
  if (episodes < 1) throw ConfigError("policy_return needs at least one episode");
  if (scalar_reward.size() != static_cast<std::size_t>(world.num_cells())) throw ShapeError("reward table size");
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int e = 0; e < episodes; ++e) {
    MOState s = world.reset(rng);
    double discount = 1.0;
    double ret = 0.0;
    while (s.t < world.horizon()) {
      const Transition tr = world.step(s, policy.choose(s.cell(), world), rng);
      ret += discount * scalar_reward[static_cast<std::size_t>(world.cell_index(tr.next.cell()))];
      discount *= gamma;
      s = tr.next;
    }
    sum += ret;
    sum_sq += ret * ret;
  }
  ReturnStats stats;
  stats.episodes = episodes;
  stats.mean = sum / episodes;
  if (episodes > 1) {
    const double var = std::max(0.0, (sum_sq - episodes * stats.mean * stats.mean) / (episodes - 1));
    stats.stderr_ = std::sqrt(var / episodes);
  }
  return stats;
}

ReturnStats policy_return(const GridWorld& world, Policy policy, const SpecAst& spec, double gamma, int episodes,
                          Rng& rng) {
  const std::vector<double> table = scalar_reward_table(world, spec);
  return policy_return(world, std::move(policy), table, gamma, episodes, rng);
}

double normalized_score(double agent_return, double oracle_return, double random_return) {
  const double gap = oracle_return - random_return;
  if (!(gap >= kDegenerateGap))
    throw DegenerateSpec("oracle return does not exceed random return; specification is vacuous on this world");
  return (agent_return - random_return) / gap;
}

std::string format_grid(std::span<const double> values, int width, int height) {
  std::string out;
  char buf[64];
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      std::snprintf(buf, sizeof buf, "%.17g", values[static_cast<std::size_t>(y * width + x)]);
      if (x) out += ' ';
      out += buf;
    }
    out += '\n';
  }
  return out;
}

std::string format_policy(std::span<const Action> policy, int width, int height) {
  static constexpr char kGlyph[] = {'^', 'v', '<', '>'};
  std::string out;
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (x) out += ' ';
      out += kGlyph[static_cast<int>(policy[static_cast<std::size_t>(y * width + x)])];
    }
    out += '\n';
  }
  return out;
}

}  // namespace specmorl
