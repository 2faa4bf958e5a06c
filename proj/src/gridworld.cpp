#include "specmorl/gridworld.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>

namespace specmorl {

namespace {

struct SizeParams {
  int side;
  int horizon;
  int hazards;
  double hazard_radius;
};

SizeParams params_for(WorldSize size) {
  switch (size) {
    case WorldSize::Small:
      return {5, 50, 3, 2.0};
    case WorldSize::Medium:
      return {12, 100, 5, 4.0};
    case WorldSize::Large:
      return {20, 150, 8, 4.0};
  }
  throw ConfigError("unknown world size");
}

int chebyshev(Cell a, Cell b) { return std::max(std::abs(a.x - b.x), std::abs(a.y - b.y)); }

int round_to_int(double v) { return static_cast<int>(std::lround(v)); }

// Serpentine: right along an upper row, down, back left along the middle
// row, down again, then right to the far wall along a lower row.
std::vector<Cell> serpentine(int width, int height) {
  const int top = round_to_int((height - 1) * 0.2);
  const int bottom = round_to_int((height - 1) * 0.8);
  const int middle = round_to_int((top + bottom) / 2.0);
  const int left = round_to_int((width - 1) * 0.25);
  const int right = round_to_int((width - 1) * 0.75);

  std::vector<Cell> path;
  auto add = [&](Cell c) {
    if (std::find(path.begin(), path.end(), c) == path.end()) path.push_back(c);
  };
  for (int x = 0; x <= right; ++x) add({x, top});
  for (int y = top; y <= middle; ++y) add({right, y});
  for (int x = right; x >= left; --x) add({x, middle});
  for (int y = middle; y <= bottom; ++y) add({left, y});
  for (int x = left; x < width; ++x) add({x, bottom});
  return path;
}

}  // namespace

WorldSize parse_world_size(std::string_view name) {
  if (name == "small") return WorldSize::Small;
  if (name == "medium") return WorldSize::Medium;
  if (name == "large") return WorldSize::Large;
  throw ConfigError("world size must be small, medium or large, got '" + std::string(name) + "'");
}

std::string_view world_size_name(WorldSize size) {
  switch (size) {
    case WorldSize::Small:
      return "small";
    case WorldSize::Medium:
      return "medium";
    case WorldSize::Large:
      return "large";
  }
  return "?";
}

std::string_view action_name(Action a) {
  switch (a) {
    case Action::Up:
      return "up";
    case Action::Down:
      return "down";
    case Action::Left:
      return "left";
    case Action::Right:
      return "right";
  }
  return "?";
}

GridWorld GridWorld::build(WorldSize size, int n_objectives, std::uint64_t seed) {
  if (n_objectives < 2 || n_objectives > kMaxObjectives)
    throw ConfigError("objective count must be between 2 and 6, got " + std::to_string(n_objectives));
  const SizeParams p = params_for(size);

  GridWorld w;
  w.size_ = size;
  w.width_ = p.side;
  w.height_ = p.side;
  w.n_objectives_ = n_objectives;
  w.horizon_ = p.horizon;
  w.hazard_radius_ = p.hazard_radius;
  w.seed_ = seed;
  w.road_ = serpentine(w.width_, w.height_);
  w.road_mask_.assign(static_cast<std::size_t>(w.num_cells()), 0);
  for (Cell c : w.road_) w.road_mask_[static_cast<std::size_t>(w.cell_index(c))] = 1;

  std::vector<Cell> off_road;
  for (int i = 0; i < w.num_cells(); ++i)
    if (!w.road_mask_[static_cast<std::size_t>(i)]) off_road.push_back(w.cell_at(i));

  auto hazard_map = [&](const std::vector<Cell>& centers) {
    std::vector<double> map(static_cast<std::size_t>(w.num_cells()));
    for (int i = 0; i < w.num_cells(); ++i) {
      double best = 1.0;
      for (Cell h : centers) best = std::min(best, std::min(1.0, chebyshev(w.cell_at(i), h) / p.hazard_radius));
      map[static_cast<std::size_t>(i)] = best;
    }
    return map;
  };

  // Seeded draw off the road; redraw until at least a fifth of the grid is
  // fully clear of hazards so that "o2 >= 1.0" stays satisfiable.
  Rng rng(seed);
  constexpr int kMaxAttempts = 10000;
  std::vector<double> hazards;
  for (int attempt = 0;; ++attempt) {
    if (attempt == kMaxAttempts) throw ConfigError("could not place hazards with a clear region");
    std::vector<Cell> pool = off_road;
    std::vector<Cell> centers;
    for (int h = 0; h < p.hazards; ++h) {
      const int pick = uniform_int(rng, 0, static_cast<int>(pool.size()) - 1);
      centers.push_back(pool[static_cast<std::size_t>(pick)]);
      pool.erase(pool.begin() + pick);
    }
    hazards = hazard_map(centers);
    const auto clear = std::count(hazards.begin(), hazards.end(), 1.0);
    if (clear * 5 >= w.num_cells()) {
      w.hazards_ = std::move(centers);
      break;
    }
  }

  const double wm1 = w.width_ - 1;
  const double hm1 = w.height_ - 1;
  std::vector<double> road(static_cast<std::size_t>(w.num_cells()));
  std::vector<double> right(road.size()), up(road.size()), center_row(road.size()), center_col(road.size());
  for (int i = 0; i < w.num_cells(); ++i) {
    const Cell c = w.cell_at(i);
    int d_road = std::numeric_limits<int>::max();
    for (Cell r : w.road_) d_road = std::min(d_road, chebyshev(c, r));
    const auto k = static_cast<std::size_t>(i);
    road[k] = std::max(0.0, 1.0 - d_road / kRoadFalloff);
    right[k] = c.x / wm1;
    up[k] = (hm1 - c.y) / hm1;
    center_row[k] = 1.0 - std::abs(c.y - hm1 / 2.0) / (hm1 / 2.0);
    center_col[k] = 1.0 - std::abs(c.x - wm1 / 2.0) / (wm1 / 2.0);
  }
  std::vector<std::vector<double>> all = {road, hazards, right, up, center_row, center_col};
  all.resize(static_cast<std::size_t>(n_objectives));
  w.maps_ = std::move(all);
  return w;
}

GridWorld GridWorld::with_slip(double slip_prob) const {
  if (!(slip_prob >= 0.0 && slip_prob <= 1.0)) throw ConfigError("slip probability outside [0,1]");
  GridWorld copy = *this;
  copy.slip_prob_ = slip_prob;
  return copy;
}

std::span<const double> GridWorld::reward_map(int k) const {
  if (k < 0 || k >= n_objectives_) throw IndexError("objective map index out of range");
  return maps_[static_cast<std::size_t>(k)];
}

RewardVector GridWorld::reward_vector(Cell c) const {
  RewardVector r;
  r.size = n_objectives_;
  const auto idx = static_cast<std::size_t>(cell_index(c));
  for (int k = 0; k < n_objectives_; ++k) r[k] = maps_[static_cast<std::size_t>(k)][idx];
  return r;
}

bool GridWorld::is_road(Cell c) const { return road_mask_[static_cast<std::size_t>(cell_index(c))] != 0; }

Cell GridWorld::move(Cell c, Action a) const {
  Cell n = c;
  switch (a) {
    case Action::Up:
      n.y -= 1;
      break;
    case Action::Down:
      n.y += 1;
      break;
    case Action::Left:
      n.x -= 1;
      break;
    case Action::Right:
      n.x += 1;
      break;
  }
  return in_bounds(n) ? n : c;
}

std::array<Outcome, kNumActions> GridWorld::kernel(Cell c, Action a) const {
  std::array<Outcome, kNumActions> out;
  for (int d = 0; d < kNumActions; ++d) {
    const auto dir = static_cast<Action>(d);
    out[static_cast<std::size_t>(d)] = {move(c, dir), dir == a ? 1.0 - slip_prob_ : slip_prob_ / 3.0};
  }
  return out;
}

MOState GridWorld::reset(Rng& rng) const {
  const Cell c = cell_at(uniform_int(rng, 0, num_cells() - 1));
  return {c.x, c.y, 0};
}

Transition GridWorld::step(const MOState& s, Action a, Rng& rng) const {
  if (s.t >= horizon_) throw EpisodeOver("step called after the horizon");
  // Both draws happen every step so that paired rollouts stay in lockstep.
  const double u = uniform01(rng);
  const int other = uniform_int(rng, 0, 2);
  Action executed = a;
  if (u < slip_prob_) {
    int d = other;
    if (d >= static_cast<int>(a)) ++d;
    executed = static_cast<Action>(d);
  }
  const Cell n = move(s.cell(), executed);
  Transition tr;
  tr.s = s;
  tr.a = a;
  tr.next = {n.x, n.y, s.t + 1};
  tr.terminal = tr.next.t == horizon_;
  tr.r = reward_vector(n);
  return tr;
}

void GridWorld::state_features(Cell c, std::span<double> out) const {
  if (out.size() != static_cast<std::size_t>(feature_width())) throw ShapeError("state feature buffer width");
  std::fill(out.begin(), out.end(), 0.0);
  out[static_cast<std::size_t>(cell_index(c))] = 1.0;
}

std::vector<double> GridWorld::state_features(Cell c) const {
  std::vector<double> out(static_cast<std::size_t>(feature_width()));
  state_features(c, out);
  return out;
}

nlohmann::json GridWorld::to_json() const {
  nlohmann::json j;
  j["size"] = world_size_name(size_);
  j["width"] = width_;
  j["height"] = height_;
  j["n_objectives"] = n_objectives_;
  j["horizon"] = horizon_;
  j["slip_prob"] = slip_prob_;
  j["seed"] = seed_;
  j["hazard_radius"] = hazard_radius_;
  auto cells = [](const std::vector<Cell>& cs) {
    nlohmann::json arr = nlohmann::json::array();
    for (Cell c : cs) arr.push_back({c.x, c.y});
    return arr;
  };
  j["road_cells"] = cells(road_);
  j["hazard_centers"] = cells(hazards_);
  nlohmann::json maps = nlohmann::json::array();
  for (const auto& m : maps_) {
    nlohmann::json rows = nlohmann::json::array();
    for (int y = 0; y < height_; ++y) {
      nlohmann::json row = nlohmann::json::array();
      for (int x = 0; x < width_; ++x) row.push_back(m[static_cast<std::size_t>(y * width_ + x)]);
      rows.push_back(std::move(row));
    }
    maps.push_back(std::move(rows));
  }
  j["reward_maps"] = std::move(maps);
  return j;
}

void write_world(const GridWorld& world, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write world export to " + path);
  out << world.to_json().dump(1) << '\n';
}

}  // namespace specmorl
