#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "specmorl/checkpoint.hpp"
#include "specmorl/core.hpp"
#include "specmorl/gridworld.hpp"
#include "specmorl/neural.hpp"
#include "specmorl/speclang.hpp"

namespace specmorl {

// A behavior spec as the agent consumes it. `id` is the spec's line in its
// spec-set file, or -1 for ad hoc specs.
struct SpecGoal {
  int id = -1;
  SpecAst spec;
  TokenSequence tokens;
};

// Linear scalarization w . r with w on the simplex.
struct LinearGoal {
  std::vector<double> weights;
};

using Goal = std::variant<SpecGoal, LinearGoal>;

SpecGoal make_spec_goal(const SpecAst& spec, int id = -1);
double scalarize(const Goal& goal, const RewardVector& r);
std::string goal_label(const Goal& goal);
std::vector<double> goal_reward_table(const GridWorld& world, const Goal& goal);

LinearGoal sample_dirichlet(Rng& rng, int n_objectives, double alpha = 1.0);

// Conditioning vector fed to the Q-head: the spec encoding, or the weight
// vector zero-padded to the encoding width.
Vector goal_vector(const QNetwork& net, const Goal& goal);

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity = 100000);

  void push(const Transition& tr);
  std::size_t size() const { return size_; }
  std::size_t capacity() const { return ring_.size(); }
  // i-th oldest stored transition.
  const Transition& at(std::size_t i) const;
  std::vector<Transition> sample(std::size_t n, Rng& rng) const;

 private:
  std::vector<Transition> ring_;
  std::size_t cursor_ = 0;
  std::size_t size_ = 0;
};

// Base transitions crossed with augmentation goals: row i pairs
// transitions[i / goals.size()] with goals[i % goals.size()]. Scalar rewards
// are always recomputed from the stored reward vectors.
struct AugmentedBatch {
  int grid_width = 0;
  std::vector<Transition> transitions;
  std::vector<Goal> goals;

  std::size_t rows() const { return transitions.size() * goals.size(); }
  const Transition& transition(std::size_t row) const { return transitions[row / goals.size()]; }
  const Goal& goal(std::size_t row) const { return goals[row % goals.size()]; }
  double scalar_reward(std::size_t row) const { return scalarize(goal(row), transition(row).r); }
};

struct AgentConfig {
  NetworkShape shape;
  int grid_width = 5;
  double gamma = 0.95;
  std::size_t replay_capacity = 100000;
  int batch_size = 32;
  int augment_goals = 8;
  int target_sync_every = 500;
  AdamConfig adam;
};

struct AgentState {
  AgentConfig config;
  QNetwork q;
  QNetwork target;
  Adam adam;
  ReplayBuffer buffer;
  std::int64_t train_steps = 0;

  static AgentState create(const AgentConfig& config, std::uint64_t seed);
};

struct TrainDiagnostics {
  double loss = 0.0;
  std::size_t rows = 0;
  bool synced_target = false;
  std::vector<Goal> goals;
};

Action greedy_action(const std::array<double, 4>& q);

Action act(const QNetwork& net, std::span<const double> state_features, const TokenSequence& tokens, double epsilon,
           Rng& rng);
Action act_with_goal(const QNetwork& net, std::span<const double> state_features, std::span<const double> goal,
                     double epsilon, Rng& rng);

// Mean squared TD error against targets f(r, goal) + gamma * max_a' Qhat(s', a') * (1 - t).
double td_loss(const QNetwork& net, const QNetwork& target, const AugmentedBatch& batch, double gamma);
// Same loss; also accumulates its gradient into net's gradient buffer.
double td_loss_backward(QNetwork& net, const QNetwork& target, const AugmentedBatch& batch, double gamma);

using GoalSampler = std::function<Goal(Rng&)>;

// One update: sample a batch, pair each transition with freshly sampled
// goals, take an Adam step and sync the target on schedule.
TrainDiagnostics train_step(AgentState& state, const GoalSampler& sampler, Rng& rng);

// Agent whose Q and target both start from the checkpoint's "q." parameters
// with fresh optimizer moments and an empty buffer.
AgentState warm_start(const Checkpoint& ckpt, const AgentConfig& config);

double epsilon_at(std::int64_t step, std::int64_t total_steps, double start, double end, double fraction);

// Greedy action and max_a Q for every cell under a fixed goal.
struct GreedyTable {
  std::vector<Action> actions;
  std::vector<double> values;
};
GreedyTable greedy_table(const QNetwork& net, const GridWorld& world, std::span<const double> goal_vec);
GreedyTable greedy_table(const QNetwork& net, const GridWorld& world, const Goal& goal);

Matrix one_hot_states(const GridWorld& world);

}  // namespace specmorl
