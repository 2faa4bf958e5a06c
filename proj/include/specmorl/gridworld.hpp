#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "specmorl/core.hpp"

namespace specmorl {

enum class WorldSize { Small, Medium, Large };

WorldSize parse_world_size(std::string_view name);
std::string_view world_size_name(WorldSize size);

// Fixed order matters: greedy tie-breaks prefer the earliest action.
enum class Action : std::uint8_t { Up, Down, Left, Right };
inline constexpr int kNumActions = 4;
inline constexpr std::array<Action, kNumActions> kAllActions = {Action::Up, Action::Down, Action::Left, Action::Right};

std::string_view action_name(Action a);

struct Cell {
  int x = 0;
  int y = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

struct MOState {
  int x = 0;
  int y = 0;
  int t = 0;
  Cell cell() const { return {x, y}; }
  friend bool operator==(const MOState&, const MOState&) = default;
};

struct Transition {
  MOState s;
  Action a = Action::Up;
  MOState next;
  bool terminal = false;
  RewardVector r;
};

struct Outcome {
  Cell cell;
  double probability = 0.0;
};

// Multi-objective gridworld. Objectives, in order: stay on road, avoid
// hazards, move right, move up, toward the center row, toward the center
// column. Row 0 is the top of the grid. Immutable once built.
class GridWorld {
 public:
  static constexpr double kRoadFalloff = 3.0;
  static constexpr double kDefaultSlip = 0.1;

  static GridWorld build(WorldSize size, int n_objectives, std::uint64_t seed);

  WorldSize size() const { return size_; }
  int width() const { return width_; }
  int height() const { return height_; }
  int num_cells() const { return width_ * height_; }
  int n_objectives() const { return n_objectives_; }
  int horizon() const { return horizon_; }
  double slip_prob() const { return slip_prob_; }
  double hazard_radius() const { return hazard_radius_; }
  std::uint64_t seed() const { return seed_; }

  // Same layout with a different slip probability (0 gives deterministic moves).
  GridWorld with_slip(double slip_prob) const;

  int cell_index(Cell c) const { return c.y * width_ + c.x; }
  Cell cell_at(int index) const { return {index % width_, index / width_}; }
  bool in_bounds(Cell c) const { return c.x >= 0 && c.x < width_ && c.y >= 0 && c.y < height_; }

  // Reward map of objective k (0-based), row-major height x width.
  std::span<const double> reward_map(int k) const;
  double reward(int k, Cell c) const { return reward_map(k)[static_cast<std::size_t>(cell_index(c))]; }
  RewardVector reward_vector(Cell c) const;
  RewardVector reward_vector(const MOState& s) const { return reward_vector(s.cell()); }

  const std::vector<Cell>& road_cells() const { return road_; }
  bool is_road(Cell c) const;
  const std::vector<Cell>& hazard_centers() const { return hazards_; }

  // Wall-clamped deterministic move.
  Cell move(Cell c, Action a) const;
  // The four executed directions with their probabilities for intended a.
  std::array<Outcome, kNumActions> kernel(Cell c, Action a) const;

  MOState reset(Rng& rng) const;
  Transition step(const MOState& s, Action a, Rng& rng) const;

  // One-hot over cells.
  int feature_width() const { return num_cells(); }
  void state_features(Cell c, std::span<double> out) const;
  std::vector<double> state_features(Cell c) const;

  nlohmann::json to_json() const;

 private:
  GridWorld() = default;

  WorldSize size_ = WorldSize::Small;
  int width_ = 0;
  int height_ = 0;
  int n_objectives_ = 0;
  int horizon_ = 0;
  double slip_prob_ = kDefaultSlip;
  double hazard_radius_ = 0.0;
  std::uint64_t seed_ = 0;
  std::vector<Cell> road_;
  std::vector<std::uint8_t> road_mask_;
  std::vector<Cell> hazards_;
  std::vector<std::vector<double>> maps_;
};

void write_world(const GridWorld& world, const std::string& path);

}  // namespace specmorl
