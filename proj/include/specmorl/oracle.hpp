#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "specmorl/core.hpp"
#include "specmorl/gridworld.hpp"
#include "specmorl/speclang.hpp"

namespace specmorl {

inline constexpr double kDefaultGamma = 0.95;

// The gridworld with its reward vector collapsed to one scalar per cell.
// Reward is earned on arrival in a cell.
struct ScalarMDP {
  const GridWorld* world = nullptr;
  double gamma = kDefaultGamma;
  std::vector<double> scalar_reward;

  static ScalarMDP from_spec(const GridWorld& world, const SpecAst& spec, double gamma = kDefaultGamma);
  static ScalarMDP from_weights(const GridWorld& world, std::span<const double> weights,
                                double gamma = kDefaultGamma);
  static ScalarMDP from_table(const GridWorld& world, std::vector<double> table, double gamma = kDefaultGamma);
};

std::vector<double> scalar_reward_table(const GridWorld& world, const SpecAst& spec);
std::vector<double> linear_reward_table(const GridWorld& world, std::span<const double> weights);

struct ValueTable {
  int width = 0;
  int height = 0;
  std::vector<double> v;
  std::vector<Action> policy;
  int iterations = 0;
};

// Value iteration to a sup-norm update below tol; greedy policy with ties
// broken in the order up, down, left, right.
ValueTable solve(const ScalarMDP& mdp, double tol = 1e-10);

// One-step lookahead values Q(s, a) under v.
std::array<double, kNumActions> action_values(const ScalarMDP& mdp, std::span<const double> v, Cell c);
double bellman_residual(const ScalarMDP& mdp, std::span<const double> v);
std::vector<Action> greedy_policy(const ScalarMDP& mdp, std::span<const double> v);

// Either a fixed action per cell or a uniformly random actor with its own
// random stream (so environment draws stay aligned across policies).
class Policy {
 public:
  static Policy table(std::vector<Action> actions);
  static Policy uniform_random(std::uint64_t seed);

  Action choose(Cell c, const GridWorld& world);
  bool is_random() const { return rng_.has_value(); }
  const std::vector<Action>& actions() const { return table_; }

 private:
  std::vector<Action> table_;
  std::optional<Rng> rng_;
};

struct ReturnStats {
  double mean = 0.0;
  double stderr_ = 0.0;
  int episodes = 0;
};

// Monte Carlo discounted return of `policy` from reset() states over the
// world's horizon. `policy` is taken by value so a random actor replays the
// same draws on every call.
ReturnStats policy_return(const GridWorld& world, Policy policy, std::span<const double> scalar_reward, double gamma,
                          int episodes, Rng& rng);
ReturnStats policy_return(const GridWorld& world, Policy policy, const SpecAst& spec, double gamma, int episodes,
                          Rng& rng);

inline constexpr double kDegenerateGap = 1e-6;

// (agent - random) / (oracle - random); DegenerateSpec when the oracle does
// not beat random by at least kDegenerateGap.
double normalized_score(double agent_return, double oracle_return, double random_return);

// Heatmap-style text grid: one row per line, values separated by spaces.
std::string format_grid(std::span<const double> values, int width, int height);
std::string format_policy(std::span<const Action> policy, int width, int height);

}  // namespace specmorl
