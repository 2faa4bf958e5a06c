#include "specmorl/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>

#include "specmorl/oracle.hpp"

namespace specmorl {

SpecGoal make_spec_goal(const SpecAst& spec, int id) { return SpecGoal{id, spec, tokenize(spec)}; }

double scalarize(const Goal& goal, const RewardVector& r) {
  if (const auto* s = std::get_if<SpecGoal>(&goal)) return evaluate(r, s->spec);
  const auto& w = std::get<LinearGoal>(goal).weights;
  if (w.size() != static_cast<std::size_t>(r.size)) throw ShapeError("weight vector length differs from reward");
  double acc = 0.0;
  for (int k = 0; k < r.size; ++k) acc += w[static_cast<std::size_t>(k)] * r[k];
  return acc;
}

std::string goal_label(const Goal& goal) {
  if (const auto* s = std::get_if<SpecGoal>(&goal)) return s->id >= 0 ? std::to_string(s->id) : render(s->spec);
  std::string out = "w:";
  char buf[40];
  const auto& w = std::get<LinearGoal>(goal).weights;
  for (std::size_t i = 0; i < w.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%s%.17g", i ? "," : "", w[i]);
    out += buf;
  }
  return out;
}

std::vector<double> goal_reward_table(const GridWorld& world, const Goal& goal) {
  if (const auto* s = std::get_if<SpecGoal>(&goal)) return scalar_reward_table(world, s->spec);
  return linear_reward_table(world, std::get<LinearGoal>(goal).weights);
}

LinearGoal sample_dirichlet(Rng& rng, int n_objectives, double alpha) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  LinearGoal g;
  g.weights.resize(static_cast<std::size_t>(n_objectives));
  double total = 0.0;
  for (double& w : g.weights) {
    w = gamma(rng);
    total += w;
  }
  if (total <= 0.0) {
    std::fill(g.weights.begin(), g.weights.end(), 1.0 / n_objectives);
    return g;
  }
  for (double& w : g.weights) w /= total;
  return g;
}

Vector goal_vector(const QNetwork& net, const Goal& goal) {
  if (const auto* s = std::get_if<SpecGoal>(&goal)) return net.encode(s->tokens);
  const auto& w = std::get<LinearGoal>(goal).weights;
  if (w.size() > static_cast<std::size_t>(net.shape().goal_width())) throw ShapeError("weight vector too wide");
  Vector v = Vector::Zero(net.shape().goal_width());
  for (std::size_t i = 0; i < w.size(); ++i) v(static_cast<Eigen::Index>(i)) = w[i];
  return v;
}

// ---------------------------------------------------------------- replay

ReplayBuffer::ReplayBuffer(std::size_t capacity) : ring_(capacity) {
  if (capacity == 0) throw ConfigError("replay capacity must be positive");
}

void ReplayBuffer::push(const Transition& tr) {
  ring_[cursor_] = tr;
  cursor_ = (cursor_ + 1) % ring_.size();
  size_ = std::min(size_ + 1, ring_.size());
}

const Transition& ReplayBuffer::at(std::size_t i) const {
  if (i >= size_) throw IndexError("replay index out of range");
  const std::size_t oldest = size_ < ring_.size() ? 0 : cursor_;
  return ring_[(oldest + i) % ring_.size()];
}

std::vector<Transition> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  if (size_ < n) throw BufferTooSmall("replay holds " + std::to_string(size_) + " transitions, need " + std::to_string(n));
  std::uniform_int_distribution<std::size_t> pick(0, size_ - 1);
  std::vector<Transition> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(ring_[pick(rng)]);
  return out;
}

AgentState AgentState::create(const AgentConfig& config, std::uint64_t seed) {
  QNetwork q = QNetwork::random(config.shape, seed);
  QNetwork target = copy_into_target(q);
  Adam adam(q.parameter_count(), config.adam);
  return AgentState{config, std::move(q), std::move(target), std::move(adam), ReplayBuffer(config.replay_capacity), 0};
}

// ---------------------------------------------------------------- acting

Action greedy_action(const std::array<double, 4>& q) {
  int best = 0;
  for (int a = 1; a < 4; ++a)
    if (q[static_cast<std::size_t>(a)] > q[static_cast<std::size_t>(best)]) best = a;
  return static_cast<Action>(best);
}

Action act_with_goal(const QNetwork& net, std::span<const double> state_features, std::span<const double> goal,
                     double epsilon, Rng& rng) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw ConfigError("epsilon outside [0,1]");
  const double u = uniform01(rng);
  if (u < epsilon) return static_cast<Action>(uniform_int(rng, 0, kNumActions - 1));
  return greedy_action(net.q_values_from_goal(state_features, goal));
}

Action act(const QNetwork& net, std::span<const double> state_features, const TokenSequence& tokens, double epsilon,
           Rng& rng) {
  const Vector enc = net.encode(tokens);
  return act_with_goal(net, state_features, std::span<const double>(enc.data(), static_cast<std::size_t>(enc.size())),
                       epsilon, rng);
}

// ---------------------------------------------------------------- loss

namespace {

// Row layout shared by Q and the target: unique spec sequences (identical
// token sequences share one encoding) or explicit goal rows.
struct BatchInputs {
  Matrix states;
  Matrix next_states;
  std::vector<const TokenSequence*> sequences;
  std::vector<int> row_goal;
  Matrix goal_rows;  // linear goals only
  bool linear = false;
};

BatchInputs prepare(const QNetwork& net, const AugmentedBatch& batch) {
  if (batch.transitions.empty() || batch.goals.empty()) throw ShapeError("empty batch");
  if (batch.grid_width <= 0) throw ShapeError("batch grid width unset");
  const auto rows = static_cast<Eigen::Index>(batch.rows());
  const int width = net.shape().state_width;
  BatchInputs in;
  in.states = Matrix::Zero(rows, width);
  in.next_states = Matrix::Zero(rows, width);
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Transition& tr = batch.transition(static_cast<std::size_t>(i));
    const int s = tr.s.y * batch.grid_width + tr.s.x;
    const int n = tr.next.y * batch.grid_width + tr.next.x;
    if (s < 0 || s >= width || n < 0 || n >= width) throw ShapeError("state outside the network's feature width");
    in.states(i, s) = 1.0;
    in.next_states(i, n) = 1.0;
  }
  in.linear = std::holds_alternative<LinearGoal>(batch.goals.front());
  if (in.linear) {
    in.goal_rows = Matrix::Zero(rows, net.shape().goal_width());
    for (Eigen::Index i = 0; i < rows; ++i) {
      const auto* g = std::get_if<LinearGoal>(&batch.goal(static_cast<std::size_t>(i)));
      if (!g) throw ShapeError("batch mixes linear and spec goals");
      for (std::size_t k = 0; k < g->weights.size(); ++k) in.goal_rows(i, static_cast<Eigen::Index>(k)) = g->weights[k];
    }
    return in;
  }
  std::map<TokenSequence, int> index;
  std::vector<int> goal_slot(batch.goals.size());
  for (std::size_t g = 0; g < batch.goals.size(); ++g) {
    const auto* sg = std::get_if<SpecGoal>(&batch.goals[g]);
    if (!sg) throw ShapeError("batch mixes linear and spec goals");
    auto [it, inserted] = index.emplace(sg->tokens, static_cast<int>(in.sequences.size()));
    if (inserted) in.sequences.push_back(&sg->tokens);
    goal_slot[g] = it->second;
  }
  in.row_goal.resize(static_cast<std::size_t>(rows));
  for (std::size_t i = 0; i < static_cast<std::size_t>(rows); ++i) in.row_goal[i] = goal_slot[i % batch.goals.size()];
  return in;
}

Matrix run(const QNetwork& net, const Matrix& states, const BatchInputs& in, Tape* tape) {
  if (in.linear) return net.forward_goals(states, in.goal_rows, tape);
  return net.forward(states, in.sequences, in.row_goal, tape);
}

double loss_impl(QNetwork* grad_net, const QNetwork& net, const QNetwork& target, const AugmentedBatch& batch,
                 double gamma) {
  if (!(net.shape() == target.shape())) throw ShapeError("network and target shapes differ");
  const BatchInputs in = prepare(net, batch);
  const Matrix next_q = run(target, in.next_states, in, nullptr);
  Tape tape;
  const Matrix q = run(net, in.states, in, grad_net ? &tape : nullptr);
  const auto rows = static_cast<Eigen::Index>(batch.rows());
  Matrix dq = Matrix::Zero(rows, net.shape().num_actions);
  double loss = 0.0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = static_cast<std::size_t>(i);
    const Transition& tr = batch.transition(row);
    const double bootstrap = tr.terminal ? 0.0 : next_q.row(i).maxCoeff();
    const double target_value = batch.scalar_reward(row) + gamma * bootstrap;
    const int a = static_cast<int>(tr.a);
    const double delta = q(i, a) - target_value;
    loss += delta * delta;
    dq(i, a) = 2.0 * delta / static_cast<double>(rows);
  }
  loss /= static_cast<double>(rows);
  if (grad_net) grad_net->backward(tape, dq);
  return loss;
}

}  // namespace

double td_loss(const QNetwork& net, const QNetwork& target, const AugmentedBatch& batch, double gamma) {
  return loss_impl(nullptr, net, target, batch, gamma);
}

double td_loss_backward(QNetwork& net, const QNetwork& target, const AugmentedBatch& batch, double gamma) {
  return loss_impl(&net, net, target, batch, gamma);
}

TrainDiagnostics train_step(AgentState& state, const GoalSampler& sampler, Rng& rng) {
  const auto need = static_cast<std::size_t>(state.config.batch_size);
  if (state.buffer.size() < need)
    throw BufferTooSmall("train_step needs " + std::to_string(need) + " transitions, replay holds " +
                         std::to_string(state.buffer.size()));
  AugmentedBatch batch;
  batch.grid_width = state.config.grid_width;
  batch.transitions = state.buffer.sample(need, rng);
  for (int g = 0; g < state.config.augment_goals; ++g) batch.goals.push_back(sampler(rng));

  state.q.zero_grad();
  TrainDiagnostics diag;
  diag.loss = td_loss_backward(state.q, state.target, batch, state.config.gamma);
  if (!std::isfinite(diag.loss)) throw NumericError("non-finite TD loss at train step " + std::to_string(state.train_steps));
  state.adam.step(state.q.parameters(), state.q.gradients());
  ++state.train_steps;
  if (state.train_steps % state.config.target_sync_every == 0) {
    state.target = copy_into_target(state.q);
    diag.synced_target = true;
  }
  diag.rows = batch.rows();
  diag.goals = std::move(batch.goals);
  return diag;
}

AgentState warm_start(const Checkpoint& ckpt, const AgentConfig& config) {
  QNetwork q(config.shape);
  get_network(ckpt, "q.", q);
  QNetwork target = copy_into_target(q);
  Adam adam(q.parameter_count(), config.adam);
  return AgentState{config, std::move(q), std::move(target), std::move(adam), ReplayBuffer(config.replay_capacity), 0};
}

double epsilon_at(std::int64_t step, std::int64_t total_steps, double start, double end, double fraction) {
  const double horizon = std::max(1.0, fraction * static_cast<double>(total_steps));
  const double progress = std::min(1.0, static_cast<double>(step) / horizon);
  return start + (end - start) * progress;
}

Matrix one_hot_states(const GridWorld& world) {
  return Matrix::Identity(world.num_cells(), world.num_cells());
}

GreedyTable greedy_table(const QNetwork& net, const GridWorld& world, std::span<const double> goal_vec) {
  const int cells = world.num_cells();
  if (goal_vec.size() != static_cast<std::size_t>(net.shape().goal_width())) throw ShapeError("goal width mismatch");
  Matrix goals(cells, net.shape().goal_width());
  for (int i = 0; i < cells; ++i)
    for (int k = 0; k < net.shape().goal_width(); ++k) goals(i, k) = goal_vec[static_cast<std::size_t>(k)];
  const Matrix q = net.forward_goals(one_hot_states(world), goals);
  GreedyTable out;
  out.actions.resize(static_cast<std::size_t>(cells));
  out.values.resize(static_cast<std::size_t>(cells));
  for (int i = 0; i < cells; ++i) {
    const std::array<double, 4> row = {q(i, 0), q(i, 1), q(i, 2), q(i, 3)};
    out.actions[static_cast<std::size_t>(i)] = greedy_action(row);
    out.values[static_cast<std::size_t>(i)] = q.row(i).maxCoeff();
  }
  return out;
}

GreedyTable greedy_table(const QNetwork& net, const GridWorld& world, const Goal& goal) {
  const Vector g = goal_vector(net, goal);
  return greedy_table(net, world, std::span<const double>(g.data(), static_cast<std::size_t>(g.size())));
}

}  // namespace specmorl
